"""Deterministic synthetic "organ" phantoms and episodes built from them.

A phantom is a stack of slices containing ellipsoidal organs over a noisy,
smoothly textured background. All randomness is drawn from per-slice
counter-based Philox streams keyed by (seed, stream, slice), so generation
is bitwise reproducible and order-independent under per-slice parallelism.

Organ and background intensities drift linearly along the slice axis with a
per-volume random slope: slices within one volume resemble their neighbors
more than slices of another volume generated from a different seed, which is
the structure the query-prototype machinery is meant to exploit. Episodes
pair K annotated slices from one phantom with the full volume of a second
phantom that shares the organ layout but nothing else.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .core import BACKGROUND, Episode, LabelMask, VolumeImage
from .errors import SpecError

DEFAULT_SUITE_SEED = 424242
_QUERY_SEED_STEP = 1  # query phantom of an episode uses spec.seed + 1


class SupportSelection(Enum):
    EVENLY_SPACED = "evenly_spaced"
    CENTER_BLOCK = "center_block"


@dataclass(frozen=True)
class OrganSpec:
    """One ellipsoidal organ: center/axes in voxel units, base intensity.

    std is a per-voxel texture amplitude (the organ's roughness), which is
    what distinguishes organ tissue from background tissue of comparable
    intensity under gradient-aware features.
    """

    class_id: int
    center: tuple[float, float, float]  # (z, y, x)
    axes: tuple[float, float, float]  # semi-axes (rz, ry, rx)
    mean: float
    std: float = 0.0


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters of one synthetic scan.

    intensity_drift lets each organ's mean wander linearly along the slice
    axis with a per-volume random slope in [-drift, drift]. background_drift
    tilts the background mean along the axis by drift * (0.6 + 0.4u) with u
    drawn per volume, so two scans of the same layout never share the same
    background profile; background_jitter adds a per-volume constant offset.
    Together these are the inter/intra-scan appearance variation the
    pseudo-labeling stage is meant to exploit.
    """

    shape: tuple[int, int, int]  # (S, H_img, W_img)
    organs: tuple[OrganSpec, ...]
    background_mean: float = 0.2
    background_std: float = 0.0
    noise_sigma: float = 0.0
    texture_scale: float = 0.0
    intensity_drift: float = 0.0
    background_drift: float = 0.0
    background_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        shape = tuple(int(d) for d in self.shape)
        if len(shape) != 3 or min(shape) < 1:
            raise SpecError(f"phantom shape must be three positive dims, got {self.shape}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "organs", tuple(self.organs))
        ids = [o.class_id for o in self.organs]
        if len(set(ids)) != len(ids) or any(i < 1 for i in ids):
            raise SpecError(f"organ class ids must be distinct and >= 1, got {ids}")
        if self.noise_sigma < 0 or self.background_std < 0 or any(o.std < 0 for o in self.organs):
            raise SpecError("intensity noise levels must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise SpecError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        for organ in self.organs:
            for dim, c, r in zip(shape, organ.center, organ.axes):
                if r <= 0:
                    raise SpecError(f"organ {organ.class_id}: axes must be positive, got {organ.axes}")
                if c - r < 0 or c + r > dim - 1:
                    raise SpecError(
                        f"organ {organ.class_id}: ellipsoid exceeds the volume along a dim of size {dim}"
                    )

    @property
    def class_set(self) -> tuple[int, ...]:
        return (BACKGROUND,) + tuple(sorted(o.class_id for o in self.organs))


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def _slice_normals(seed: int, stream: int, z: int, shape: tuple[int, int]) -> np.ndarray:
    return _rng(seed, stream, z).standard_normal(shape)


def _region_index(spec: PhantomSpec) -> np.ndarray:
    """(S, H, W) int index: 0 = background, i+1 = spec.organs[i]; on overlap
    the first-listed organ wins."""
    s, h, w = spec.shape
    zz, yy, xx = np.meshgrid(np.arange(s), np.arange(h), np.arange(w), indexing="ij")
    region = np.zeros(spec.shape, dtype=np.int64)
    for i, organ in enumerate(spec.organs):
        cz, cy, cx = organ.center
        rz, ry, rx = organ.axes
        inside = ((zz - cz) / rz) ** 2 + ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        region[(region == 0) & inside] = i + 1
    return region


def _texture_field(spec: PhantomSpec) -> np.ndarray:
    """Smooth low-frequency modulation: a small sum of 3D cosine waves whose
    frequencies and phases are drawn once per volume."""
    rng = _rng(spec.seed, 1)
    s, h, w = spec.shape
    zz, yy, xx = np.meshgrid(
        np.arange(s) / max(s, 1), np.arange(h) / max(h, 1), np.arange(w) / max(w, 1), indexing="ij"
    )
    field = np.zeros(spec.shape, dtype=np.float64)
    ncomp = 3
    for _ in range(ncomp):
        fz, fy, fx = rng.uniform(0.5, 2.0, size=3)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        field += np.cos(2.0 * math.pi * (fz * zz + fy * yy + fx * xx) + phase)
    return field / ncomp


def generate(spec: PhantomSpec) -> tuple[VolumeImage, LabelMask]:
    """Generate the phantom volume and its ground-truth mask. Identical specs
    produce bitwise-identical outputs."""
    s, h, w = spec.shape
    region = _region_index(spec)
    labels = np.zeros(spec.shape, dtype=np.uint8)
    for i, organ in enumerate(spec.organs):
        labels[region == i + 1] = organ.class_id

    region_means = np.array([spec.background_mean] + [o.mean for o in spec.organs])
    region_stds = np.array([spec.background_std] + [o.std for o in spec.organs])
    dial = _rng(spec.seed, 0)
    organ_slopes = dial.uniform(-1.0, 1.0, size=len(spec.organs))
    bg_level = spec.background_jitter * dial.uniform(-1.0, 1.0)
    bg_slope = spec.background_drift * (0.7 + 0.3 * dial.uniform())
    slopes = np.concatenate(([bg_slope], spec.intensity_drift * organ_slopes))
    zpos = (np.arange(s) - (s - 1) / 2.0) / max((s - 1) / 2.0, 1.0)  # [-1, 1] along the stack
    means_z = region_means[None, :] + slopes[None, :] * zpos[:, None]
    means_z[:, 0] += bg_level

    intensity = np.take_along_axis(
        np.broadcast_to(means_z[:, None, None, :], (s, h, w, len(region_means))),
        region[..., None],
        axis=-1,
    )[..., 0]
    if (region_stds > 0).any():
        stds = region_stds[region]
        jitter = np.stack([_slice_normals(spec.seed, 2, z, (h, w)) for z in range(s)], axis=0)
        intensity = intensity + stds * jitter
    if spec.texture_scale > 0:
        intensity = intensity + spec.texture_scale * _texture_field(spec)
    if spec.noise_sigma > 0:
        noise = np.stack([_slice_normals(spec.seed, 3, z, (h, w)) for z in range(s)], axis=0)
        intensity = intensity + spec.noise_sigma * noise
    return VolumeImage(intensity.astype(np.float32)), LabelMask(labels)


def select_support_slices(mask: LabelMask, k: int, selection: SupportSelection) -> tuple[int, ...]:
    """Pick K annotated slice indices among the mask's foreground-containing
    slices: evenly spaced across the range, or a centered contiguous block."""
    if k < 1:
        raise SpecError(f"support shots must be >= 1, got {k}")
    fg_slices = np.flatnonzero((mask.data != BACKGROUND).any(axis=(1, 2)))
    n = len(fg_slices)
    if n < k:
        raise SpecError(f"mask has {n} foreground slices, fewer than K={k}")
    if k == 1:
        chosen = fg_slices[[(n - 1) // 2]]
    elif selection is SupportSelection.EVENLY_SPACED:
        pos = np.round(np.arange(k) * (n - 1) / (k - 1)).astype(int)
        chosen = fg_slices[pos]
    else:
        start = (n - k) // 2
        chosen = fg_slices[start : start + k]
    return tuple(int(i) for i in chosen)


def foreground_range(mask: LabelMask) -> tuple[int, int] | None:
    fg = np.flatnonzero((mask.data != BACKGROUND).any(axis=(1, 2)))
    return (int(fg[0]), int(fg[-1])) if len(fg) else None


@dataclass(frozen=True)
class EpisodePlan:
    """Everything an episode is built from, kept whole so it can also be
    serialized to disk (full volumes plus the chosen support slice indices)."""

    support_volume: VolumeImage
    support_mask: LabelMask
    query_volume: VolumeImage
    query_mask: LabelMask
    support_slices: tuple[int, ...]
    class_set: tuple[int, ...]
    class_slice_range: tuple[int, int] | None

    def episode(self) -> Episode:
        idx = list(self.support_slices)
        return Episode(
            support_images=self.support_volume.data[idx],
            support_masks=self.support_mask.data[idx],
            query=self.query_volume,
            class_set=self.class_set,
            class_slice_range=self.class_slice_range,
            truth=self.query_mask,
        )


def plan_episode(
    spec: PhantomSpec,
    k: int = 3,
    selection: SupportSelection = SupportSelection.EVENLY_SPACED,
    query_seed: int | None = None,
) -> EpisodePlan:
    """Generate the two phantoms of an episode and choose the support slices.

    The support phantom is generate(spec); the query phantom reuses the spec
    with a different seed, so noise, texture, and drift all differ between
    the two scans while the organ layout is shared.
    """
    support_vol, support_mask = generate(spec)
    qseed = spec.seed + _QUERY_SEED_STEP if query_seed is None else query_seed
    query_vol, query_mask = generate(replace(spec, seed=qseed))
    chosen = select_support_slices(support_mask, k, selection)
    return EpisodePlan(
        support_volume=support_vol,
        support_mask=support_mask,
        query_volume=query_vol,
        query_mask=query_mask,
        support_slices=chosen,
        class_set=spec.class_set,
        class_slice_range=foreground_range(query_mask),
    )


def make_episode(
    spec: PhantomSpec,
    k: int = 3,
    selection: SupportSelection = SupportSelection.EVENLY_SPACED,
    query_seed: int | None = None,
) -> Episode:
    """Build an episode from two phantoms sharing the organ layout; the query
    ground truth rides along hidden, for evaluation only."""
    return plan_episode(spec, k, selection, query_seed).episode()


def suite_specs(
    n: int = 20,
    base_seed: int = DEFAULT_SUITE_SEED,
    shape: tuple[int, int, int] = (32, 64, 64),
    noise_sigma: float = 0.03,
    texture_scale: float = 0.03,
    intensity_drift: float = 0.08,
    background_drift: float = 0.52,
    background_jitter: float = 0.10,
) -> list[PhantomSpec]:
    """Support-phantom specs for an n-episode suite, all derived from base_seed.

    Episodes are 1-way, mirroring the organ-at-a-time evaluation convention:
    each phantom holds one organ, alternating between two organ-class flavors
    of different geometry and roughness so the suite yields two per-class
    columns. Organs are bright and textured over a dark background whose mean
    rises along the slice axis at a per-volume rate: near the top of the
    stack the background approaches organ intensity, which is where the
    initial segmentation goes wrong and where window-local query prototypes
    have something to fix.
    """
    if n < 1:
        raise SpecError(f"suite size must be >= 1, got {n}")
    s, h, w = shape
    specs = []
    for e in range(n):
        rng = _rng(base_seed, 100, e)
        jit = lambda scale: rng.uniform(-scale, scale)  # noqa: E731
        if e % 2 == 0:
            organ = OrganSpec(
                class_id=1,
                center=(s * 0.50 + jit(s * 0.06), h * 0.46 + jit(h * 0.06), w * 0.45 + jit(w * 0.06)),
                axes=(s * 0.34 * (1 + jit(0.15)), h * 0.26 * (1 + jit(0.15)), w * 0.24 * (1 + jit(0.15))),
                mean=0.90,
                std=0.12,
            )
        else:
            organ = OrganSpec(
                class_id=2,
                center=(s * 0.50 + jit(s * 0.06), h * 0.55 + jit(h * 0.06), w * 0.58 + jit(w * 0.05)),
                axes=(s * 0.30 * (1 + jit(0.15)), h * 0.22 * (1 + jit(0.12)), w * 0.20 * (1 + jit(0.12))),
                mean=0.85,
                std=0.15,
            )
        specs.append(
            PhantomSpec(
                shape=shape,
                organs=(organ,),
                background_mean=-0.45,
                background_std=0.05,
                noise_sigma=noise_sigma,
                texture_scale=texture_scale,
                intensity_drift=intensity_drift,
                background_drift=background_drift,
                background_jitter=background_jitter,
                seed=base_seed + 7919 * e,
            )
        )
    return specs


def default_suite(
    n: int = 20,
    base_seed: int = DEFAULT_SUITE_SEED,
    shape: tuple[int, int, int] = (32, 64, 64),
    k: int = 3,
    selection: SupportSelection = SupportSelection.EVENLY_SPACED,
) -> list[Episode]:
    """The 20-volume phantom suite used by the acceptance checks."""
    return [make_episode(spec, k=k, selection=selection) for spec in suite_specs(n, base_seed, shape)]
