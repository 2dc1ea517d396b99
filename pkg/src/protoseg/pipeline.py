"""Three-stage inference pipeline over one episode.

Stage 1 scores every query slice against support prototypes. Stage 2 turns
the current probability maps into pseudo-labels, pools confident pixels over
a slice window around each target slice into query prototypes, and builds a
per-target augmented bank. Stage 3 re-scores every slice with its augmented
bank. run_episode chains the stages; with iterations > 1 each round's output
probabilities seed the next round's pseudo-labeling, and banks are rebuilt
fresh every round (support plus that round's query prototypes, never
accumulating).

Support-to-query pairing is ALL_K by default (one K-averaged prototype per
class, Eq.-1 style). K_CHUNK splits the query's foreground slice range into
K contiguous chunks and scores chunk k against the k-th support shot alone
(shots ordered by slice position); a shot lacking a class falls back to the
all-K prototype for that class.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import (
    Episode,
    EpisodeConfig,
    FeatureVolume,
    LabelMask,
    Strategy,
    SupportPairing,
    VolumeImage,
    binary_mask_view,
    resample_mask,
)
from .errors import ShapeError
from .features import FeatureExtractor
from .proto import Prototype, PrototypeBank, Source, build_bank, confident_pixels, query_prototype, support_prototype
from .scoring import ProbabilityMap, PseudoMask, probability_map, pseudo_label


@dataclass(frozen=True)
class WindowSpec:
    """Slice window [i-m, i+m] around a target slice, clipped at the volume
    boundary; radius None covers the whole volume."""

    radius: int | None

    def __post_init__(self):
        if self.radius is not None and self.radius < 0:
            raise ShapeError(f"window radius must be >= 0 or None, got {self.radius}")

    def indices(self, target: int, num_slices: int) -> range:
        if not 0 <= target < num_slices:
            raise ShapeError(f"target slice {target} outside volume of {num_slices} slices")
        if self.radius is None:
            return range(num_slices)
        return range(max(0, target - self.radius), min(num_slices - 1, target + self.radius) + 1)


@dataclass(frozen=True)
class Stage1Result:
    """Support prototypes/banks (one entry per query slice; shared object
    under ALL_K pairing) plus the initial per-slice predictions."""

    support_protos: tuple[Mapping[int, Prototype], ...]
    support_banks: tuple[PrototypeBank, ...]
    probs: tuple[ProbabilityMap, ...]
    pseudo: tuple[PseudoMask, ...]
    query_features: FeatureVolume


@dataclass(frozen=True)
class SegmentationResult:
    """Final masks at image resolution plus the evidence that produced them."""

    masks: LabelMask
    probability_maps: tuple[ProbabilityMap, ...]  # final round, feature resolution
    round_pseudo_masks: tuple[tuple[PseudoMask, ...], ...]  # seeds of each round
    provenance: dict  # per-class prototype provenance, JSON-ready
    confident_counts: tuple[int, ...]  # final-round confident pixels per slice


def _map_slices(fn: Callable[[int], object], n: int, threads: int) -> list:
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))  # assembled by slice index, not completion order


def _chunk_of(slice_idx: int, k: int, bounds: tuple[int, int]) -> int:
    lo, hi = bounds
    if slice_idx <= lo:
        return 0
    if slice_idx >= hi:
        return k - 1
    return min(k - 1, (slice_idx - lo) * k // (hi - lo + 1))


def _feature_res_masks(episode: Episode, grid: tuple[int, int]) -> np.ndarray:
    return np.stack([resample_mask(m, grid) for m in episode.support_masks], axis=0)


def _all_k_prototypes(
    feats: np.ndarray, masks: np.ndarray, class_set: Sequence[int]
) -> dict[int, Prototype]:
    mask_vol = LabelMask(masks)
    protos = {}
    for cid in class_set:
        views = binary_mask_view(mask_vol, cid, tuple(class_set))
        protos[cid] = support_prototype(list(feats), list(views), cid)
    return protos


def _per_shot_prototypes(
    feats: np.ndarray, masks: np.ndarray, class_set: Sequence[int], all_k: Mapping[int, Prototype]
) -> list[dict[int, Prototype]]:
    # A shot lacking a class falls back to the K-averaged prototype.
    mask_vol = LabelMask(masks)
    shots = []
    for k in range(feats.shape[0]):
        per_class = {}
        for cid in class_set:
            view = binary_mask_view(mask_vol, cid, tuple(class_set))[k]
            if view.any():
                per_class[cid] = support_prototype([feats[k]], [view], cid, slice_indices=[k])
            else:
                per_class[cid] = all_k[cid]
        shots.append(per_class)
    return shots


def stage1_initial(
    episode: Episode,
    extractor: FeatureExtractor | None,
    config: EpisodeConfig,
    *,
    threads: int = 1,
    support_features: FeatureVolume | None = None,
    query_features: FeatureVolume | None = None,
) -> Stage1Result:
    """Initial segmentation: support prototypes, then per-slice probability
    maps of the query volume against the support-only bank.

    support_features/query_features bypass extraction for externally computed
    embeddings; otherwise the extractor runs on both volumes.
    """
    if query_features is None:
        if extractor is None:
            raise ShapeError("either an extractor or precomputed query features are required")
        query_features = extractor.extract(episode.query)
    if support_features is None:
        if extractor is None:
            raise ShapeError("either an extractor or precomputed support features are required")
        support_features = extractor.extract(VolumeImage(episode.support_images))
    if support_features.num_slices != episode.k:
        raise ShapeError(
            f"support features cover {support_features.num_slices} slices, expected K={episode.k}"
        )
    if query_features.num_slices != episode.query.num_slices:
        raise ShapeError("query features do not cover every query slice")
    if (
        support_features.grid_shape != query_features.grid_shape
        or support_features.depth != query_features.depth
    ):
        raise ShapeError(
            f"support features {support_features.grid_shape}+Z{support_features.depth} do not match "
            f"query features {query_features.grid_shape}+Z{query_features.depth}"
        )

    sfeats = support_features.data.astype(np.float64)
    masks_fr = _feature_res_masks(episode, support_features.grid_shape)
    all_k = _all_k_prototypes(sfeats, masks_fr, episode.class_set)

    n = episode.query.num_slices
    if config.pairing is SupportPairing.K_CHUNK:
        bounds = episode.class_slice_range or (0, n - 1)
        per_shot = _per_shot_prototypes(sfeats, masks_fr, episode.class_set, all_k)
        protos = tuple(per_shot[_chunk_of(i, episode.k, bounds)] for i in range(n))
        shot_banks = [build_bank(p, {}, Strategy.SUPPORT_ONLY) for p in per_shot]
        banks = tuple(shot_banks[_chunk_of(i, episode.k, bounds)] for i in range(n))
    else:
        bank = build_bank(all_k, {}, Strategy.SUPPORT_ONLY)
        protos = tuple(all_k for _ in range(n))
        banks = tuple(bank for _ in range(n))

    qdata = query_features.data
    probs = _map_slices(
        lambda i: probability_map(qdata[i], banks[i], config.alpha, config.fusion), n, threads
    )
    pseudo = [pseudo_label(p) for p in probs]
    return Stage1Result(protos, banks, tuple(probs), tuple(pseudo), query_features)


def stage2_pseudo_label(
    stage1: Stage1Result,
    config: EpisodeConfig,
    class_set: Sequence[int],
    *,
    probs: Sequence[ProbabilityMap] | None = None,
    pseudo: Sequence[PseudoMask] | None = None,
    threads: int = 1,
) -> tuple[PrototypeBank, ...]:
    """Confidence-aware pseudo-labeling: one augmented bank per target slice.

    probs/pseudo default to the Stage-1 outputs; later refinement rounds pass
    the previous round's Stage-3 outputs instead.
    """
    probs = stage1.probs if probs is None else tuple(probs)
    pseudo = stage1.pseudo if pseudo is None else tuple(pseudo)
    qdata = stage1.query_features.data.astype(np.float64)
    n = qdata.shape[0]
    if len(probs) != n or len(pseudo) != n:
        raise ShapeError("need one probability map and pseudo-mask per query slice")
    window = WindowSpec(config.window_radius)

    def bank_for(i: int) -> PrototypeBank:
        idxs = list(window.indices(i, n))
        feats = [qdata[j] for j in idxs]
        wprobs = [probs[j] for j in idxs]
        wpseudo = [pseudo[j] for j in idxs]
        qprotos = {
            cid: query_prototype(feats, wprobs, wpseudo, cid, config.gamma_for(cid), slice_indices=idxs)
            for cid in class_set
        }
        return build_bank(stage1.support_protos[i], qprotos, config.strategy)

    return tuple(_map_slices(bank_for, n, threads))


def _predict_all(
    query_features: FeatureVolume,
    banks: Sequence[PrototypeBank],
    config: EpisodeConfig,
    threads: int,
) -> tuple[np.ndarray, tuple[ProbabilityMap, ...], tuple[PseudoMask, ...]]:
    qdata = query_features.data
    n = qdata.shape[0]
    if len(banks) != n:
        raise ShapeError(f"need one bank per query slice, got {len(banks)} for {n}")
    probs = _map_slices(
        lambda i: probability_map(qdata[i], banks[i], config.alpha, config.fusion), n, threads
    )
    pseudo = [pseudo_label(p) for p in probs]
    labels = np.stack([p.labels for p in pseudo], axis=0)
    return labels, tuple(probs), tuple(pseudo)


def _upsample_labels(labels: np.ndarray, image_shape: tuple[int, int]) -> LabelMask:
    return LabelMask(np.stack([resample_mask(s, image_shape) for s in labels], axis=0))


def _confident_counts(
    probs: Sequence[ProbabilityMap], pseudo: Sequence[PseudoMask], config: EpisodeConfig, class_set
) -> tuple[int, ...]:
    counts = []
    for pm, ps in zip(probs, pseudo):
        total = 0
        for cid in class_set:
            total += int(confident_pixels(pm, ps, cid, config.gamma_for(cid)).sum())
        counts.append(total)
    return tuple(counts)


def _provenance(banks: Sequence[PrototypeBank], class_set) -> dict:
    out: dict = {}
    for cid in class_set:
        support_entries: list[dict] = []
        seen = set()
        query_targets: list[int] = []
        query_slices: set[int] = set()
        query_pixels = 0
        fallback_targets = 0
        for target, bank in enumerate(banks):
            for p in bank[cid]:
                if p.fallback:
                    fallback_targets += 1
                if p.source is Source.QUERY:
                    query_targets.append(target)
                    query_slices.update(p.slice_indices)
                    query_pixels += p.pixel_count
                else:
                    key = (p.slice_indices, p.pixel_count)
                    if key not in seen:
                        seen.add(key)
                        support_entries.append(
                            {"slices": list(p.slice_indices), "pixel_count": p.pixel_count}
                        )
        out[str(cid)] = {
            "support": support_entries,
            "query": {
                "targets": query_targets,
                "slices": sorted(query_slices),
                "pixel_count": query_pixels,
                "fallback_targets": fallback_targets,
            },
        }
    return out


def stage3_final(
    query_features: FeatureVolume,
    banks: Sequence[PrototypeBank],
    config: EpisodeConfig,
    image_shape: tuple[int, int],
    *,
    seed_pseudo: Sequence[PseudoMask] = (),
    threads: int = 1,
) -> SegmentationResult:
    """Final segmentation of every query slice with its augmented bank."""
    labels, probs, pseudo = _predict_all(query_features, banks, config, threads)
    class_set = banks[0].class_ids
    rounds = (tuple(seed_pseudo),) if seed_pseudo else ()
    return SegmentationResult(
        masks=_upsample_labels(labels, image_shape),
        probability_maps=probs,
        round_pseudo_masks=rounds,
        provenance=_provenance(banks, class_set),
        confident_counts=_confident_counts(probs, pseudo, config, class_set),
    )


def run_episode(
    episode: Episode,
    extractor: FeatureExtractor | None,
    config: EpisodeConfig,
    *,
    threads: int = 1,
    support_features: FeatureVolume | None = None,
    query_features: FeatureVolume | None = None,
) -> SegmentationResult:
    """Run the full pipeline: Stage 1 once, then `iterations` rounds of
    Stage 2 + Stage 3, each round seeded by the previous round's output."""
    stage1 = stage1_initial(
        episode,
        extractor,
        config,
        threads=threads,
        support_features=support_features,
        query_features=query_features,
    )
    probs: tuple[ProbabilityMap, ...] = stage1.probs
    pseudo: tuple[PseudoMask, ...] = stage1.pseudo
    rounds: list[tuple[PseudoMask, ...]] = []
    for _ in range(config.iterations):
        rounds.append(pseudo)
        banks = stage2_pseudo_label(
            stage1, config, episode.class_set, probs=probs, pseudo=pseudo, threads=threads
        )
        labels, probs, pseudo = _predict_all(stage1.query_features, banks, config, threads)
    return SegmentationResult(
        masks=_upsample_labels(labels, episode.query.slice_shape),
        probability_maps=probs,
        round_pseudo_masks=tuple(rounds),
        provenance=_provenance(banks, episode.class_set),
        confident_counts=_confident_counts(probs, pseudo, config, episode.class_set),
    )
