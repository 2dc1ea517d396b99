"""Feature extraction: deterministic built-in extractors and the FEATVOL bridge.

The trained backbone of a real deployment is replaced here by three cheap,
fully deterministic per-slice extractors (RAW, MULTISCALE, PATCHSTAT) plus a
loader for embeddings computed externally and stored as FEATVOL files. All
extractors are pure functions of their input: repeated calls are bitwise
identical, and each slice's features depend only on that slice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Protocol, runtime_checkable

import numpy as np
from scipy import ndimage

from . import formats
from .core import FeatureVolume, VolumeImage
from .errors import KernelTooLargeError, ShapeError, SpecError


@runtime_checkable
class FeatureExtractor(Protocol):
    name: str

    def extract(self, vol: VolumeImage) -> FeatureVolume: ...


class ExtractorKind(Enum):
    RAW = "raw"
    MULTISCALE = "multiscale"
    PATCHSTAT = "patchstat"


@dataclass(frozen=True)
class BuiltinExtractorSpec:
    """Parameters of a built-in extractor.

    RAW: Z=1 intensity. MULTISCALE: intensity + one Gaussian-blurred channel
    per radius + gradient magnitude (Z = len(radii) + 2). PATCHSTAT: local
    mean/std/min/max over a patch x patch window (Z=4). downsample >= 1
    reduces resolution by block-mean over d x d blocks, so the output grid is
    (ceil(H_img/d), ceil(W_img/d)).
    """

    kind: ExtractorKind
    radii: tuple[float, ...] = (1.0, 2.0)
    patch: int = 3
    downsample: int = 1

    def __post_init__(self):
        if self.downsample < 1:
            raise SpecError(f"downsample factor must be >= 1, got {self.downsample}")
        if self.kind is ExtractorKind.PATCHSTAT and (self.patch < 1 or self.patch % 2 == 0):
            raise SpecError(f"patch size must be odd and >= 1, got {self.patch}")
        if self.kind is ExtractorKind.MULTISCALE:
            if not self.radii or any(r <= 0 for r in self.radii):
                raise SpecError(f"blur radii must be positive, got {self.radii}")
            object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))

    @property
    def depth(self) -> int:
        if self.kind is ExtractorKind.RAW:
            return 1
        if self.kind is ExtractorKind.MULTISCALE:
            return len(self.radii) + 2
        return 4

    def output_dims(self, h_img: int, w_img: int) -> tuple[int, int, int]:
        d = self.downsample
        return math.ceil(h_img / d), math.ceil(w_img / d), self.depth


def _block_mean(chan: np.ndarray, d: int) -> np.ndarray:
    # Partial edge blocks are averaged over the pixels they actually cover.
    if d == 1:
        return chan
    h, w = chan.shape
    row_edges = np.arange(0, h, d)
    col_edges = np.arange(0, w, d)
    sums = np.add.reduceat(np.add.reduceat(chan, row_edges, axis=0), col_edges, axis=1)
    rcount = np.diff(np.append(row_edges, h)).astype(np.float64)
    ccount = np.diff(np.append(col_edges, w)).astype(np.float64)
    return sums / np.outer(rcount, ccount)


def _grad_mag(img: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(img)
    return np.sqrt(gy * gy + gx * gx)


def _check_kernel(h: int, w: int, size: int, what: str) -> None:
    if size > min(h, w):
        raise KernelTooLargeError(f"{what} of size {size} does not fit a {h}x{w} slice")


def _slice_channels(spec: BuiltinExtractorSpec, img: np.ndarray) -> list[np.ndarray]:
    h, w = img.shape
    if spec.kind is ExtractorKind.RAW:
        return [img]
    if spec.kind is ExtractorKind.MULTISCALE:
        chans = [img]
        for sigma in spec.radii:
            radius = int(3.0 * sigma + 0.5)
            _check_kernel(h, w, 2 * radius + 1, f"gaussian kernel (sigma={sigma})")
            chans.append(ndimage.gaussian_filter(img, sigma, truncate=3.0, mode="reflect"))
        chans.append(_grad_mag(img))
        return chans
    _check_kernel(h, w, spec.patch, "patch window")
    mean = ndimage.uniform_filter(img, spec.patch, mode="reflect")
    sq_mean = ndimage.uniform_filter(img * img, spec.patch, mode="reflect")
    std = np.sqrt(np.maximum(sq_mean - mean * mean, 0.0))
    mn = ndimage.minimum_filter(img, spec.patch, mode="reflect")
    mx = ndimage.maximum_filter(img, spec.patch, mode="reflect")
    return [mean, std, mn, mx]


def extract(spec: BuiltinExtractorSpec, vol: VolumeImage) -> FeatureVolume:
    """Run a built-in extractor over every slice of the volume."""
    if vol.num_slices < 1:
        raise ShapeError("cannot extract features from an empty volume")
    maps = []
    for s in range(vol.num_slices):
        img = vol.data[s].astype(np.float64)
        chans = [_block_mean(c, spec.downsample) for c in _slice_channels(spec, img)]
        maps.append(np.stack(chans, axis=-1))
    return FeatureVolume(np.stack(maps, axis=0).astype(np.float32), source_shape=vol.slice_shape)


@dataclass(frozen=True)
class BuiltinExtractor:
    spec: BuiltinExtractorSpec
    name: str = ""

    def __post_init__(self):
        if not self.name:
            object.__setattr__(self, "name", self.spec.kind.value)

    def extract(self, vol: VolumeImage) -> FeatureVolume:
        return extract(self.spec, vol)


@dataclass(frozen=True)
class PrecomputedFeatures:
    """Extractor facade over embeddings loaded from a FEATVOL file."""

    features: FeatureVolume
    name: str = "precomputed"

    def extract(self, vol: VolumeImage) -> FeatureVolume:
        if self.features.num_slices != vol.num_slices:
            raise ShapeError(
                f"precomputed features cover {self.features.num_slices} slices, "
                f"volume has {vol.num_slices}"
            )
        return self.features


def load_embeddings(path) -> FeatureVolume:
    """Load externally computed embeddings; values round-trip bit-exactly."""
    return formats.read_featvol(path)


def save_embeddings(path, fv: FeatureVolume) -> None:
    formats.write_featvol(path, fv)


def parse_extractor(text: str) -> BuiltinExtractor:
    """Parse an extractor spec string, e.g. ``raw``, ``multiscale:radii=1+2,d=2``,
    ``patchstat:p=5,d=2``."""
    head, _, tail = text.partition(":")
    try:
        kind = ExtractorKind(head.strip().lower())
    except ValueError:
        raise SpecError(f"unknown extractor {head!r}; expected raw|multiscale|patchstat") from None
    kwargs: dict = {}
    if tail:
        for item in tail.split(","):
            key, _, val = item.partition("=")
            key = key.strip().lower()
            if not val:
                raise SpecError(f"malformed extractor parameter {item!r}")
            if key in ("d", "downsample"):
                kwargs["downsample"] = int(val)
            elif key in ("p", "patch"):
                kwargs["patch"] = int(val)
            elif key == "radii":
                kwargs["radii"] = tuple(float(r) for r in val.split("+"))
            else:
                raise SpecError(f"unknown extractor parameter {key!r}")
    return BuiltinExtractor(BuiltinExtractorSpec(kind, **kwargs), name=text)
