"""Volumetric data model shared by every stage of the pipeline.

Volumes are ordered stacks of 2D slices, masks are class-id grids congruent
with their volume, and episodes bundle K annotated support slices with an
unlabeled query volume. All types are immutable after construction; arrays
are frozen so instances can be shared across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, InitVar
from enum import Enum
from typing import Mapping, Union

import numpy as np

from .errors import ClassNotInEpisodeError, ShapeError, SpecError

BACKGROUND = 0  # class id 0 always denotes background; foreground classes are >= 1

#: Sentinel for a pseudo-labeling window covering the whole query volume.
WINDOW_ALL = None

GammaSpec = Union[float, Mapping[int, float]]


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class VolumeImage:
    """A 3D scan as an ordered (acquisition-order) stack of 2D slices.

    data is (S, H_img, W_img) float32; spacing is optional per-axis voxel
    size in mm, carried as metadata only.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] | None = None

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeError(f"volume must be (S, H, W) with positive dims, got {arr.shape}")
        object.__setattr__(self, "data", _frozen(arr))
        if self.spacing is not None:
            object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def num_slices(self) -> int:
        return self.data.shape[0]

    @property
    def slice_shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


@dataclass(frozen=True)
class LabelMask:
    """Per-voxel class ids, congruent with a VolumeImage. (S, H, W) uint8."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeError(f"mask must be (S, H, W) with positive dims, got {arr.shape}")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer) or arr.min(initial=0) < 0 or arr.max(initial=0) > 255:
                raise ShapeError("mask values must be small non-negative integers")
            arr = arr.astype(np.uint8)
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def num_slices(self) -> int:
        return self.data.shape[0]

    @property
    def slice_shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    def present_classes(self) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unique(self.data))

    def check_congruent(self, vol: VolumeImage) -> None:
        if self.data.shape != vol.data.shape:
            raise ShapeError(f"mask shape {self.data.shape} != volume shape {vol.data.shape}")


@dataclass(frozen=True)
class FeatureVolume:
    """Per-slice H x W grids of Z-dimensional embedding vectors.

    data is (S, H, W, Z) float32 and must be finite everywhere. source_shape
    records the (H_img, W_img) the features were derived from; None when the
    features were loaded from an external file that did not declare it.
    """

    data: np.ndarray
    source_shape: tuple[int, int] | None = None

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 4 or min(arr.shape) < 1:
            raise ShapeError(f"features must be (S, H, W, Z) with positive dims, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ShapeError("feature volume contains non-finite values")
        object.__setattr__(self, "data", _frozen(arr))
        if self.source_shape is not None:
            object.__setattr__(self, "source_shape", (int(self.source_shape[0]), int(self.source_shape[1])))

    @property
    def num_slices(self) -> int:
        return self.data.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    @property
    def depth(self) -> int:
        return self.data.shape[3]


class Strategy(Enum):
    """How the final prototype bank is assembled (support vs. query sources)."""

    SUPPORT_ONLY = "support_only"
    QUERY_ONLY = "query_only"
    SUPPORT_AND_QUERY = "support_and_query"


class Fusion(Enum):
    """Reduction over a class's prototypes when it holds more than one."""

    MAX = "max"
    MEAN = "mean"


class SupportPairing(Enum):
    """How support shots pair with query slices: one K-averaged prototype for
    the whole volume, or the k-th shot scoring the k-th contiguous query chunk."""

    ALL_K = "all_k"
    K_CHUNK = "k_chunk"


@dataclass(frozen=True)
class EpisodeConfig:
    """Inference-time knobs for one episode.

    gamma may be a single threshold or a per-class mapping. window_radius is
    the slice radius m (WINDOW_ALL / None pools the whole volume). iterations
    counts pseudo-labeling rounds: 1 is the headline method (one Stage-2/3
    pass after the initial segmentation).
    """

    gamma: GammaSpec = 0.95
    window_radius: int | None = 7
    iterations: int = 1
    strategy: Strategy = Strategy.SUPPORT_AND_QUERY
    alpha: float = 20.0
    fusion: Fusion = Fusion.MAX
    pairing: SupportPairing = SupportPairing.ALL_K

    def __post_init__(self):
        gammas = self.gamma.values() if isinstance(self.gamma, Mapping) else (self.gamma,)
        for g in gammas:
            if not 0.0 <= float(g) <= 1.0:
                raise SpecError(f"gamma must lie in [0, 1], got {g}")
        if self.alpha <= 0:
            raise SpecError(f"alpha must be > 0, got {self.alpha}")
        if self.iterations < 1:
            raise SpecError(f"iterations must be >= 1, got {self.iterations}")
        if self.window_radius is not None and self.window_radius < 0:
            raise SpecError(f"window radius must be >= 0 or WINDOW_ALL, got {self.window_radius}")

    def gamma_for(self, class_id: int) -> float:
        if isinstance(self.gamma, Mapping):
            try:
                return float(self.gamma[class_id])
            except KeyError:
                raise ClassNotInEpisodeError(f"no gamma configured for class {class_id}") from None
        return float(self.gamma)


@dataclass(frozen=True)
class Episode:
    """K annotated support slices plus an unlabeled query volume.

    The ground-truth query mask, when known, rides along hidden: it is not a
    dataclass field and nothing in the pipeline reads it. Evaluation code
    retrieves it through evaluate.ground_truth().

    class_slice_range optionally records which query slices are known to
    contain foreground (episode-protocol metadata used only by the K_CHUNK
    support pairing).
    """

    support_images: np.ndarray  # (K, H_img, W_img) float32
    support_masks: np.ndarray  # (K, H_img, W_img) uint8
    query: VolumeImage
    class_set: tuple[int, ...]
    class_slice_range: tuple[int, int] | None = None
    truth: InitVar["LabelMask | None"] = None

    def __post_init__(self, truth):
        imgs = np.asarray(self.support_images, dtype=np.float32)
        masks = np.asarray(self.support_masks)
        if imgs.ndim != 3 or imgs.shape[0] < 1:
            raise ShapeError(f"support images must be (K, H, W), got {imgs.shape}")
        if masks.shape != imgs.shape:
            raise ShapeError(f"support masks {masks.shape} != support images {imgs.shape}")
        if imgs.shape[1:] != self.query.slice_shape:
            raise ShapeError(
                f"support slice shape {imgs.shape[1:]} != query slice shape {self.query.slice_shape}"
            )
        classes = tuple(sorted(int(c) for c in self.class_set))
        if len(set(classes)) != len(classes):
            raise SpecError(f"duplicate class ids in {self.class_set}")
        if BACKGROUND not in classes or len(classes) < 2:
            raise SpecError("class set must contain background (0) and at least one foreground class")
        if any(c < 0 for c in classes):
            raise SpecError("class ids must be non-negative")
        if not np.isin(masks, classes).all():
            raise SpecError("support mask values outside the episode class set")
        if truth is not None:
            truth.check_congruent(self.query)
            if not np.isin(truth.data, classes).all():
                raise SpecError("ground-truth values outside the episode class set")
        if self.class_slice_range is not None:
            lo, hi = (int(v) for v in self.class_slice_range)
            if not (0 <= lo <= hi < self.query.num_slices):
                raise SpecError(f"class slice range {self.class_slice_range} outside the query volume")
            object.__setattr__(self, "class_slice_range", (lo, hi))
        object.__setattr__(self, "support_images", _frozen(imgs))
        object.__setattr__(self, "support_masks", _frozen(masks.astype(np.uint8)))
        object.__setattr__(self, "class_set", classes)
        object.__setattr__(self, "_truth", truth)

    @property
    def k(self) -> int:
        return self.support_images.shape[0]

    @property
    def foreground_classes(self) -> tuple[int, ...]:
        return tuple(c for c in self.class_set if c != BACKGROUND)


def binary_mask_view(mask: LabelMask, class_id: int, class_set: tuple[int, ...]) -> np.ndarray:
    """Per-slice binary view of one class: 1 where mask == class_id, else 0.

    class_id must belong to the episode class set; the binary views over all
    classes in the set partition the pixel grid.
    """
    if class_id not in class_set:
        raise ClassNotInEpisodeError(f"class {class_id} not in episode class set {class_set}")
    return (mask.data == class_id).astype(np.uint8)


def resample_mask(mask_slice: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resample of a 2D mask grid to the target (H, W).

    Works on binary views and on class-id grids alike (values are sampled,
    never interpolated). Identity when shapes already match.
    """
    arr = np.asarray(mask_slice)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2D mask slice, got shape {arr.shape}")
    th, tw = int(target[0]), int(target[1])
    if th < 1 or tw < 1:
        raise ShapeError(f"target shape must be positive, got {target}")
    sh, sw = arr.shape
    if (sh, sw) == (th, tw):
        return arr.copy()
    rows = (np.arange(th) * sh) // th
    cols = (np.arange(tw) * sw) // tw
    return arr[np.ix_(rows, cols)]
