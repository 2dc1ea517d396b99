"""Dice evaluation and the three ablation runners.

Dice is computed in 3D per (volume, class) over foreground classes, matching
the volumetric reporting convention; a per-slice average is available behind
a flag. Ablation tables vary exactly one axis (window size, pseudo-labeling
iterations, or prototype-set strategy), hold everything else at the base
config, and serialize deterministically so reruns are byte-identical.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .core import Episode, EpisodeConfig, LabelMask, Strategy
from .errors import ShapeError, SpecError
from .features import FeatureExtractor
from .pipeline import SegmentationResult, run_episode


def ground_truth(episode: Episode) -> LabelMask:
    """Evaluator-side accessor for the episode's hidden query ground truth."""
    truth = getattr(episode, "_truth", None)
    if truth is None:
        raise SpecError("episode carries no ground truth; it cannot be evaluated")
    return truth


def dice(pred: np.ndarray, truth: np.ndarray) -> float:
    """2|A.B| / (|A|+|B|) over binary grids or volumes; 1.0 when both are
    empty, 0.0 when exactly one is."""
    p = np.asarray(pred) != 0
    t = np.asarray(truth) != 0
    if p.shape != t.shape:
        raise ShapeError(f"dice inputs must be congruent, got {p.shape} vs {t.shape}")
    a = int(p.sum())
    b = int(t.sum())
    if a + b == 0:
        return 1.0
    return 2.0 * int((p & t).sum()) / (a + b)


@dataclass(frozen=True)
class DiceRow:
    episode: int
    class_id: int
    value: float


@dataclass(frozen=True)
class DiceReport:
    """Per-(volume, class) Dice rows with the paper-style aggregates: the
    grand mean is the unweighted mean of per-class means."""

    rows: tuple[DiceRow, ...]
    fold: int = 0

    def per_class_mean(self) -> dict[int, float]:
        by_class: dict[int, list[float]] = {}
        for row in self.rows:
            by_class.setdefault(row.class_id, []).append(row.value)
        return {cid: float(np.mean(vals)) for cid, vals in sorted(by_class.items())}

    def grand_mean(self) -> float:
        means = self.per_class_mean()
        return float(np.mean(list(means.values())))


def evaluate_episode(
    result: SegmentationResult,
    truth: LabelMask,
    episode_idx: int = 0,
    per_slice: bool = False,
) -> list[DiceRow]:
    """Per-foreground-class Dice of a segmentation result against the truth.

    3D counts over the whole volume by default; per_slice averages the
    slicewise Dice instead.
    """
    if result.masks.data.shape != truth.data.shape:
        raise ShapeError(
            f"prediction {result.masks.data.shape} and truth {truth.data.shape} are not congruent"
        )
    classes = [c for c in truth.present_classes() if c != 0]
    classes += [c for c in np.unique(result.masks.data) if c != 0 and c not in classes]
    rows = []
    for cid in sorted(classes):
        pred_c = result.masks.data == cid
        true_c = truth.data == cid
        if per_slice:
            value = float(np.mean([dice(pred_c[s], true_c[s]) for s in range(pred_c.shape[0])]))
        else:
            value = dice(pred_c, true_c)
        rows.append(DiceRow(episode_idx, int(cid), value))
    return rows


def evaluate_suite(
    episodes: Sequence[Episode],
    extractor: FeatureExtractor,
    config: EpisodeConfig,
    threads: int = 1,
    fold: int = 0,
) -> DiceReport:
    """Run the pipeline over every episode and collect Dice rows, merged by
    episode index regardless of completion order."""

    def one(idx: int) -> list[DiceRow]:
        result = run_episode(episodes[idx], extractor, config)
        return evaluate_episode(result, ground_truth(episodes[idx]), episode_idx=idx)

    if threads > 1 and len(episodes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(one, range(len(episodes))))
    else:
        chunks = [one(i) for i in range(len(episodes))]
    return DiceReport(tuple(row for chunk in chunks for row in chunk), fold=fold)


class AblationAxis(Enum):
    WINDOW = "window"
    ITERATIONS = "iterations"
    STRATEGY = "strategy"


#: Default axis values. Window radii use None for the whole-volume window.
#: Iteration rows use the paper-style count where 2 means one pseudo-labeling
#: round on top of the initial segmentation (row r maps to iterations=r-1).
WINDOW_VALUES: tuple = (0, 3, 7, 10, None)
ITERATION_VALUES: tuple = (2, 5, 8, 10)
STRATEGY_VALUES: tuple = (Strategy.SUPPORT_ONLY, Strategy.QUERY_ONLY, Strategy.SUPPORT_AND_QUERY)


def _axis_label(axis: AblationAxis, value) -> str:
    if axis is AblationAxis.WINDOW:
        return "ALL" if value is None else str(int(value))
    if axis is AblationAxis.STRATEGY:
        return value.name
    return str(int(value))


def _axis_config(axis: AblationAxis, value, base: EpisodeConfig) -> EpisodeConfig:
    if axis is AblationAxis.WINDOW:
        return replace(base, window_radius=value)
    if axis is AblationAxis.STRATEGY:
        return replace(base, strategy=value)
    if int(value) < 2:
        raise SpecError("iteration rows use the paper count and must be >= 2")
    return replace(base, iterations=int(value) - 1)


@dataclass(frozen=True)
class AblationTable:
    axis: str
    class_ids: tuple[int, ...]
    rows: tuple[tuple[str, tuple[float, ...], float], ...]  # (label, per-class means, grand mean)

    def to_csv(self) -> str:
        header = ",".join([self.axis] + [f"class_{c}" for c in self.class_ids] + ["mean"])
        lines = [header]
        for label, per_class, mean in self.rows:
            lines.append(",".join([label] + [f"{v:.4f}" for v in per_class] + [f"{mean:.4f}"]))
        return "\n".join(lines) + "\n"


def ablate(
    episodes: Sequence[Episode],
    axis: AblationAxis,
    extractor: FeatureExtractor,
    base_config: EpisodeConfig,
    values: Sequence | None = None,
    threads: int = 1,
) -> AblationTable:
    """Sweep one axis over the suite; one table row per axis value."""
    if not episodes:
        raise SpecError("ablation needs a non-empty episode suite")
    if values is None:
        values = {
            AblationAxis.WINDOW: WINDOW_VALUES,
            AblationAxis.ITERATIONS: ITERATION_VALUES,
            AblationAxis.STRATEGY: STRATEGY_VALUES,
        }[axis]
    rows = []
    class_ids: tuple[int, ...] = ()
    for value in values:
        config = _axis_config(axis, value, base_config)
        report = evaluate_suite(episodes, extractor, config, threads=threads)
        means = report.per_class_mean()
        class_ids = tuple(means)
        rows.append((_axis_label(axis, value), tuple(means[c] for c in class_ids), report.grand_mean()))
    return AblationTable(axis.value, class_ids, tuple(rows))
