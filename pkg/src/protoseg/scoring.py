"""Pixelwise scoring against a prototype bank.

Each pixel's feature vector is compared to every class prototype by scaled
cosine similarity; per-class scores are fused (MAX or MEAN over the class's
prototypes) and turned into a probability map with a max-stabilized softmax.
Cosine is computed on unit-normalized vectors so predicted labels are
invariant to positive rescaling of the features; vectors with norm below
1e-12 score 0 against everything instead of producing NaN.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EpisodeConfig, Fusion
from .errors import BankError, ShapeError
from .proto import PrototypeBank

NORM_EPS = 1e-12


@dataclass(frozen=True)
class ProbabilityMap:
    """Per-pixel class distribution: (H, W, C) with rows summing to 1.

    class_ids is ascending and aligned with the last axis.
    """

    values: np.ndarray
    class_ids: tuple[int, ...]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        ids = tuple(int(c) for c in self.class_ids)
        if vals.ndim != 3 or vals.shape[2] != len(ids):
            raise ShapeError(f"probability map {vals.shape} does not match {len(ids)} classes")
        if list(ids) != sorted(set(ids)):
            raise ShapeError(f"class ids must be ascending and unique, got {ids}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "class_ids", ids)

    def prob_of(self, class_id: int) -> np.ndarray:
        return self.values[..., self.class_ids.index(class_id)]


@dataclass(frozen=True)
class PseudoMask:
    """Argmax labels plus the probability of the argmax class per pixel."""

    labels: np.ndarray  # (H, W) uint8 class ids
    confidence: np.ndarray  # (H, W) float64

    def __post_init__(self):
        labels = np.asarray(self.labels)
        conf = np.asarray(self.confidence, dtype=np.float64)
        if labels.shape != conf.shape or labels.ndim != 2:
            raise ShapeError("labels and confidence must be congruent 2-D grids")
        labels = labels.astype(np.uint8, copy=True)
        labels.setflags(write=False)
        conf.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "confidence", conf)


def _unit_rows(vectors: np.ndarray) -> np.ndarray:
    """Scale each trailing-axis vector to unit norm; norms < NORM_EPS map to 0."""
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    safe = norms >= NORM_EPS
    return np.divide(vectors, norms, out=np.zeros_like(vectors, dtype=np.float64), where=safe)


def similarity(feature: np.ndarray, proto: np.ndarray, alpha: float) -> float:
    """Scaled cosine similarity between one feature vector and one prototype.

    Returns alpha * cos(feature, proto); 0 when either vector has norm below
    1e-12 (degenerate all-zero regions fail soft rather than producing NaN).
    """
    if alpha <= 0:
        raise ShapeError(f"alpha must be > 0, got {alpha}")
    f = np.asarray(feature, dtype=np.float64)
    p = np.asarray(proto, dtype=np.float64)
    if f.shape != p.shape or f.ndim != 1:
        raise ShapeError(f"similarity needs equal-length vectors, got {f.shape} vs {p.shape}")
    return float(alpha * np.dot(_unit_rows(f), _unit_rows(p)))


def class_logits(features: np.ndarray, bank: PrototypeBank, alpha: float, fusion: Fusion) -> np.ndarray:
    """Fused alpha-scaled cosine scores per class: (H, W, C), classes ascending."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 3:
        raise ShapeError(f"expected a (H, W, Z) feature slice, got {feats.shape}")
    fhat = _unit_rows(feats)
    cols = []
    for cid in bank.class_ids:
        protos = bank[cid]
        if not protos:
            raise BankError(f"class {cid} has an empty prototype list")
        mat = np.stack([p.vector for p in protos], axis=0)
        if mat.shape[1] != feats.shape[2]:
            raise ShapeError(
                f"prototype depth {mat.shape[1]} does not match feature depth {feats.shape[2]}"
            )
        sims = fhat @ _unit_rows(mat).T  # (H, W, n_protos)
        fused = sims.max(axis=-1) if fusion is Fusion.MAX else sims.mean(axis=-1)
        cols.append(fused)
    return alpha * np.stack(cols, axis=-1)


def probability_map(
    features: np.ndarray, bank: PrototypeBank, alpha: float, fusion: Fusion = Fusion.MAX
) -> ProbabilityMap:
    """Softmax over fused class similarities (max-subtracted for stability)."""
    logits = class_logits(features, bank, alpha, fusion)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    expd = np.exp(shifted)
    return ProbabilityMap(expd / expd.sum(axis=-1, keepdims=True), bank.class_ids)


def pseudo_label(probs: ProbabilityMap) -> PseudoMask:
    """Per-pixel argmax; ties break toward the lowest class id."""
    idx = np.argmax(probs.values, axis=-1)
    ids = np.asarray(probs.class_ids, dtype=np.uint8)
    conf = np.take_along_axis(probs.values, idx[..., None], axis=-1)[..., 0]
    return PseudoMask(ids[idx], conf)


def predict_mask(
    features: np.ndarray, bank: PrototypeBank, config: EpisodeConfig
) -> tuple[np.ndarray, ProbabilityMap]:
    """Predicted label grid (feature resolution) and its probability map."""
    probs = probability_map(features, bank, config.alpha, config.fusion)
    return pseudo_label(probs).labels, probs
