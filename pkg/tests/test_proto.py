import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protoseg.core import Strategy
from protoseg.errors import BankError, EmptyClassError, ShapeError
from protoseg.proto import (
    Prototype,
    PrototypeBank,
    Source,
    build_bank,
    query_prototype,
    support_prototype,
)
from protoseg.scoring import ProbabilityMap, PseudoMask

from oracles import confident_mean_prototype, confident_set, masked_mean_prototype


def _proto(cid, vec, source=Source.SUPPORT, fallback=False):
    return Prototype(cid, np.asarray(vec, dtype=np.float64), source, (0,), 1, fallback=fallback)


# ---------------------------------------------------------------------------
# support_prototype (masked average pooling)
# ---------------------------------------------------------------------------

def test_support_constant_field():
    f = np.full((3, 3, 2), 4.5)
    m = np.ones((3, 3), dtype=np.uint8)
    p = support_prototype([f], [m], 1)
    np.testing.assert_allclose(p.vector, [4.5, 4.5])
    assert p.source is Source.SUPPORT and p.pixel_count == 9


def test_support_masked_mean_hand_case():
    f = np.array([[1.0, 2.0], [3.0, 4.0]])[..., None]
    m = np.array([[1, 1], [0, 0]], dtype=np.uint8)
    p = support_prototype([f], [m], 1)
    np.testing.assert_allclose(p.vector, [1.5])


def test_support_two_slice_average():
    f1 = np.array([[1.0, 3.0]])[..., None]  # masked mean u = 2
    f2 = np.array([[5.0, 9.0]])[..., None]  # masked mean w = 7
    m = np.ones((1, 2), dtype=np.uint8)
    p = support_prototype([f1, f2], [m, m], 1)
    np.testing.assert_allclose(p.vector, [(2.0 + 7.0) / 2])


def test_support_skips_empty_slices():
    f1 = np.full((2, 2, 1), 10.0)
    f2 = np.full((2, 2, 1), 99.0)
    m1 = np.ones((2, 2), dtype=np.uint8)
    m0 = np.zeros((2, 2), dtype=np.uint8)
    p = support_prototype([f1, f2], [m1, m0], 1, slice_indices=[4, 9])
    np.testing.assert_allclose(p.vector, [10.0])
    assert p.slice_indices == (4,)


def test_support_all_empty_raises():
    f = np.zeros((2, 2, 1))
    m = np.zeros((2, 2), dtype=np.uint8)
    with pytest.raises(EmptyClassError):
        support_prototype([f, f], [m, m], 1)


def test_support_shape_mismatch():
    with pytest.raises(ShapeError):
        support_prototype([np.zeros((2, 2, 1))], [np.ones((3, 3))], 1)


def test_support_matches_oracle_random(rng):
    for _ in range(50):
        k = rng.integers(1, 5)
        h, w, z = rng.integers(2, 7), rng.integers(2, 7), rng.integers(1, 5)
        feats = [rng.normal(size=(h, w, z)) for _ in range(k)]
        masks = [(rng.random((h, w)) < 0.4).astype(np.uint8) for _ in range(k)]
        if not any(m.any() for m in masks):
            masks[0][0, 0] = 1
        got = support_prototype(feats, masks, 1).vector
        np.testing.assert_allclose(got, masked_mean_prototype(feats, masks), rtol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_support_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 5))
    feats = [rng.normal(size=(4, 4, 3)) for _ in range(k)]
    masks = [(rng.random((4, 4)) < 0.5).astype(np.uint8) for _ in range(k)]
    if not any(m.any() for m in masks):
        masks[0][1, 1] = 1
    perm = rng.permutation(k)
    a = support_prototype(feats, masks, 1).vector
    b = support_prototype([feats[i] for i in perm], [masks[i] for i in perm], 1).vector
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_support_inside_convex_hull(seed):
    rng = np.random.default_rng(seed)
    feats = [rng.normal(size=(5, 5, 4)) for _ in range(3)]
    masks = [(rng.random((5, 5)) < 0.5).astype(np.uint8) for _ in range(3)]
    if not any(m.any() for m in masks):
        masks[0][2, 2] = 1
    p = support_prototype(feats, masks, 1).vector
    masked = np.concatenate([f[m != 0] for f, m in zip(feats, masks) if m.any()], axis=0)
    assert (p >= masked.min(axis=0) - 1e-12).all()
    assert (p <= masked.max(axis=0) + 1e-12).all()


# ---------------------------------------------------------------------------
# query_prototype (confidence-filtered pooling)
# ---------------------------------------------------------------------------

def _prob_pseudo(prob_fg, labels):
    """Build 2-class ProbabilityMap/PseudoMask stacks from fg probabilities."""
    probs, pseudos = [], []
    for p, lab in zip(prob_fg, labels):
        values = np.stack([1.0 - p, p], axis=-1)
        probs.append(ProbabilityMap(values, (0, 1)))
        conf = np.take_along_axis(values, lab[..., None].astype(int), axis=-1)[..., 0]
        pseudos.append(PseudoMask(lab.astype(np.uint8), conf))
    return probs, pseudos


def test_query_empty_confident_set(rng):
    f = [rng.normal(size=(3, 3, 2))]
    p = [np.full((3, 3), 0.99)]
    lab = [np.ones((3, 3), dtype=np.uint8)]
    probs, pseudos = _prob_pseudo(p, lab)
    assert query_prototype(f, probs, pseudos, 1, 1.0) is None


def test_query_constant_field():
    f = [np.full((2, 2, 3), 7.0)]
    probs, pseudos = _prob_pseudo([np.ones((2, 2))], [np.ones((2, 2), dtype=np.uint8)])
    p = query_prototype(f, probs, pseudos, 1, 1.0)
    np.testing.assert_allclose(p.vector, [7.0, 7.0, 7.0])
    assert p.source is Source.QUERY


def test_query_two_slice_hand_case():
    # slice 1 confident pixels {1.0, 3.0}, slice 2 confident pixels {5.0}
    f1 = np.array([[1.0, 3.0], [50.0, 60.0]])[..., None]
    f2 = np.array([[5.0, 70.0], [80.0, 90.0]])[..., None]
    lab1 = np.array([[1, 1], [0, 0]], dtype=np.uint8)
    lab2 = np.array([[1, 0], [0, 0]], dtype=np.uint8)
    prob1 = np.array([[0.97, 0.99], [0.1, 0.2]])
    prob2 = np.array([[0.98, 0.3], [0.2, 0.1]])
    probs, pseudos = _prob_pseudo([prob1, prob2], [lab1, lab2])
    p = query_prototype([f1, f2], probs, pseudos, 1, 0.95)
    np.testing.assert_allclose(p.vector, [(2.0 + 5.0) / 2])
    assert p.pixel_count == 3


def test_query_requires_label_and_threshold(rng):
    # high probability but pseudo-labeled other class -> not confident
    f = [rng.normal(size=(2, 2, 1))]
    prob = [np.full((2, 2), 0.99)]
    lab = [np.zeros((2, 2), dtype=np.uint8)]
    probs, pseudos = _prob_pseudo(prob, lab)
    assert query_prototype(f, probs, pseudos, 1, 0.5) is None


def test_query_matches_oracle_random(rng):
    for _ in range(50):
        m = rng.integers(1, 4)
        h, w, z = rng.integers(2, 6), rng.integers(2, 6), rng.integers(1, 4)
        feats = [rng.normal(size=(h, w, z)) for _ in range(m)]
        prob_fg = [rng.random((h, w)) for _ in range(m)]
        labels = [(rng.random((h, w)) < 0.5).astype(np.uint8) for _ in range(m)]
        gamma = float(rng.random() * 0.6 + 0.2)
        probs, pseudos = _prob_pseudo(prob_fg, labels)
        got = query_prototype(feats, probs, pseudos, 1, gamma)
        want, count = confident_mean_prototype(feats, prob_fg, labels, 1, gamma)
        if want is None:
            assert got is None
        else:
            np.testing.assert_allclose(got.vector, want, rtol=1e-9)
            assert got.pixel_count == count


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_query_confident_set_antitone_in_gamma(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 4))
    prob_fg = [rng.random((4, 4)) for _ in range(m)]
    labels = [(rng.random((4, 4)) < 0.5).astype(np.uint8) for _ in range(m)]
    g1, g2 = sorted(rng.random(2))
    s1 = confident_set(prob_fg, labels, 1, g1)
    s2 = confident_set(prob_fg, labels, 1, g2)
    assert s2 <= s1


def test_gamma_zero_confident_sets_partition(rng):
    prob_fg = [rng.random((5, 5))]
    labels = [(prob_fg[0] > 0.5).astype(np.uint8)]
    s0 = confident_set([1.0 - prob_fg[0]], labels, 0, 0.0)
    s1 = confident_set(prob_fg, labels, 1, 0.0)
    assert len(s0) + len(s1) == 25
    assert s0.isdisjoint(s1)


# ---------------------------------------------------------------------------
# build_bank (prototype-set strategies)
# ---------------------------------------------------------------------------

def test_bank_union_with_empty_query_equals_support_only():
    sup = {0: _proto(0, [1.0]), 1: _proto(1, [2.0])}
    a = build_bank(sup, {}, Strategy.SUPPORT_AND_QUERY)
    b = build_bank(sup, {0: None, 1: None}, Strategy.SUPPORT_ONLY)
    assert a.protos == b.protos


def test_bank_support_only_ignores_query():
    sup = {1: _proto(1, [1.0])}
    qry = {1: _proto(1, [9.0], Source.QUERY)}
    bank = build_bank(sup, qry, Strategy.SUPPORT_ONLY)
    assert len(bank[1]) == 1 and bank[1][0].source is Source.SUPPORT


def test_bank_union_counts():
    sup = {0: _proto(0, [1.0]), 1: _proto(1, [2.0])}
    qry = {0: _proto(0, [3.0], Source.QUERY), 1: _proto(1, [4.0], Source.QUERY)}
    bank = build_bank(sup, qry, Strategy.SUPPORT_AND_QUERY)
    assert all(len(bank[c]) == 2 for c in (0, 1))


def test_bank_query_only_falls_back_to_support():
    sup = {0: _proto(0, [1.0]), 1: _proto(1, [2.0])}
    qry = {0: _proto(0, [3.0], Source.QUERY), 1: None}
    bank = build_bank(sup, qry, Strategy.QUERY_ONLY)
    assert bank[0][0].source is Source.QUERY
    assert bank[1][0].fallback and bank[1][0].source is Source.SUPPORT


def test_bank_zero_prototypes_rejected():
    with pytest.raises(BankError):
        build_bank({}, {1: None}, Strategy.SUPPORT_AND_QUERY)
    with pytest.raises(BankError):
        PrototypeBank({1: ()})


def test_bank_rejects_misfiled_prototype():
    with pytest.raises(BankError):
        PrototypeBank({0: (_proto(1, [1.0]),)})
