import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from protoseg.core import (
    Episode,
    EpisodeConfig,
    FeatureVolume,
    LabelMask,
    Strategy,
    VolumeImage,
    binary_mask_view,
    resample_mask,
)
from protoseg.errors import ClassNotInEpisodeError, ShapeError, SpecError

from oracles import nn_resample


def test_volume_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        VolumeImage(np.zeros((4, 4)))
    with pytest.raises(ShapeError):
        VolumeImage(np.zeros((0, 4, 4)))


def test_volume_is_immutable():
    vol = VolumeImage(np.zeros((2, 3, 3)))
    with pytest.raises(ValueError):
        vol.data[0, 0, 0] = 1.0


def test_feature_volume_rejects_non_finite():
    data = np.zeros((1, 2, 2, 3), dtype=np.float32)
    data[0, 0, 0, 0] = np.nan
    with pytest.raises(ShapeError):
        FeatureVolume(data)


def test_mask_congruence_check():
    vol = VolumeImage(np.zeros((2, 4, 4)))
    LabelMask(np.zeros((2, 4, 4), dtype=np.uint8)).check_congruent(vol)
    with pytest.raises(ShapeError):
        LabelMask(np.zeros((2, 4, 5), dtype=np.uint8)).check_congruent(vol)


def test_binary_mask_view_all_background():
    mask = LabelMask(np.zeros((1, 3, 3), dtype=np.uint8))
    view = binary_mask_view(mask, 1, (0, 1))
    assert view.sum() == 0


def test_binary_mask_view_identity():
    mask = LabelMask(np.full((1, 3, 3), 2, dtype=np.uint8))
    view = binary_mask_view(mask, 2, (0, 2))
    assert view.all()


def test_binary_mask_view_elementwise():
    mask = LabelMask(np.array([[[0, 1], [1, 2]]], dtype=np.uint8))
    view = binary_mask_view(mask, 1, (0, 1, 2))
    np.testing.assert_array_equal(view[0], [[0, 1], [1, 0]])


def test_binary_mask_view_unknown_class():
    mask = LabelMask(np.zeros((1, 2, 2), dtype=np.uint8))
    with pytest.raises(ClassNotInEpisodeError):
        binary_mask_view(mask, 3, (0, 1))


def test_mask_views_partition_grid():
    rng = np.random.default_rng(0)
    mask = LabelMask(rng.integers(0, 4, size=(3, 8, 8)).astype(np.uint8))
    total = sum(binary_mask_view(mask, c, (0, 1, 2, 3)).astype(int) for c in (0, 1, 2, 3))
    assert (total == 1).all()


def test_resample_constant_field():
    out = resample_mask(np.ones((4, 4), dtype=np.uint8), (2, 2))
    assert out.shape == (2, 2) and out.all()


def test_resample_identity():
    grid = np.arange(12, dtype=np.uint8).reshape(3, 4)
    np.testing.assert_array_equal(resample_mask(grid, (3, 4)), grid)


def test_resample_upsample_block():
    grid = np.array([[1, 0], [0, 0]], dtype=np.uint8)
    out = resample_mask(grid, (4, 4))
    expected = np.zeros((4, 4), dtype=np.uint8)
    expected[:2, :2] = 1
    np.testing.assert_array_equal(out, expected)


def test_resample_rejects_zero_target():
    with pytest.raises(ShapeError):
        resample_mask(np.ones((2, 2), dtype=np.uint8), (0, 2))


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.integers(0, 1)),
    st.integers(1, 15),
    st.integers(1, 15),
)
def test_resample_matches_oracle_and_preserves_range(grid, th, tw):
    out = resample_mask(grid, (th, tw))
    np.testing.assert_array_equal(out, nn_resample(grid, (th, tw)))
    assert set(np.unique(out)) <= {0, 1}


def _episode_parts(k=2, shape=(6, 8, 8)):
    rng = np.random.default_rng(1)
    imgs = rng.normal(size=(k,) + shape[1:]).astype(np.float32)
    masks = np.zeros((k,) + shape[1:], dtype=np.uint8)
    masks[:, 2:5, 2:5] = 1
    query = VolumeImage(rng.normal(size=shape).astype(np.float32))
    return imgs, masks, query


def test_episode_rejects_shape_mismatch():
    imgs, masks, query = _episode_parts()
    with pytest.raises(ShapeError):
        Episode(imgs, masks[:, :4, :], query, (0, 1))
    bad_query = VolumeImage(np.zeros((6, 4, 4), dtype=np.float32))
    with pytest.raises(ShapeError):
        Episode(imgs, masks, bad_query, (0, 1))


def test_episode_requires_background_and_foreground():
    imgs, masks, query = _episode_parts()
    with pytest.raises(SpecError):
        Episode(imgs, masks, query, (1,))
    with pytest.raises(SpecError):
        Episode(imgs, masks, query, (0,))


def test_episode_rejects_stray_mask_values():
    imgs, masks, query = _episode_parts()
    masks = masks.copy()
    masks[0, 0, 0] = 7
    with pytest.raises(SpecError):
        Episode(imgs, masks, query, (0, 1))


def test_episode_truth_is_not_a_public_field():
    imgs, masks, query = _episode_parts()
    truth = LabelMask(np.zeros((6, 8, 8), dtype=np.uint8))
    ep = Episode(imgs, masks, query, (0, 1), truth=truth)
    public = [name for name in vars(ep) if not name.startswith("_")]
    assert "truth" not in public
    assert all("truth" not in name for name in public)
    assert "truth" not in repr(ep)


def test_config_validation():
    with pytest.raises(SpecError):
        EpisodeConfig(gamma=1.5)
    with pytest.raises(SpecError):
        EpisodeConfig(alpha=0.0)
    with pytest.raises(SpecError):
        EpisodeConfig(iterations=0)
    with pytest.raises(SpecError):
        EpisodeConfig(window_radius=-1)
    cfg = EpisodeConfig(gamma={0: 0.9, 1: 0.8})
    assert cfg.gamma_for(1) == 0.8
    with pytest.raises(ClassNotInEpisodeError):
        cfg.gamma_for(5)


def test_config_defaults_match_documented_values():
    cfg = EpisodeConfig()
    assert cfg.gamma == 0.95
    assert cfg.window_radius == 7
    assert cfg.iterations == 1
    assert cfg.strategy is Strategy.SUPPORT_AND_QUERY
    assert cfg.alpha == 20.0
