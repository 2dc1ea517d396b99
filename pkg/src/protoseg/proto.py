"""Prototype extraction and bank construction.

Support prototypes are masked average pools of support features: per slice,
the mean feature over the class's mask, then the average over slices that
actually contain the class. Query prototypes follow the same shape but pool
only *confident* pixels: pixels pseudo-labeled with the class whose class
probability clears the confidence threshold. The augmented bank is the
per-class union of both sources.

Degenerate cases are repaired the only way that keeps both pools well
defined: slices with no (confident) pixels are dropped from the outer
average rather than contributing zeros, and a class with no confident pixels
in the whole window simply gets no query prototype.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Mapping, Optional, Sequence

import numpy as np

from .core import Strategy
from .errors import BankError, EmptyClassError, ShapeError

if TYPE_CHECKING:  # only for annotations; scoring imports this module at runtime
    from .scoring import ProbabilityMap, PseudoMask


class Source(Enum):
    SUPPORT = "support"
    QUERY = "query"


@dataclass(frozen=True)
class Prototype:
    """One Z-vector summarizing a class, with provenance of where it came from."""

    class_id: int
    vector: np.ndarray  # (Z,) float64, finite
    source: Source
    slice_indices: tuple[int, ...]  # slices that contributed pixels
    pixel_count: int  # total pixels pooled, >= 1
    fallback: bool = False  # True when QUERY_ONLY fell back to the support prototype

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.ndim != 1 or vec.size < 1:
            raise ShapeError(f"prototype vector must be 1-D, got shape {vec.shape}")
        if not np.isfinite(vec).all():
            raise ShapeError("prototype vector contains non-finite values")
        if self.pixel_count < 1:
            raise ShapeError("prototype pixel count must be >= 1")
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)
        object.__setattr__(self, "slice_indices", tuple(int(i) for i in self.slice_indices))


@dataclass(frozen=True)
class PrototypeBank:
    """Class-indexed prototype lists used for scoring; every list is non-empty."""

    protos: Mapping[int, tuple[Prototype, ...]]

    def __post_init__(self):
        frozen = {}
        for cid, plist in self.protos.items():
            plist = tuple(plist)
            if not plist:
                raise BankError(f"class {cid} has no prototypes")
            if any(p.class_id != cid for p in plist):
                raise BankError(f"prototype filed under class {cid} carries a different class id")
            frozen[int(cid)] = plist
        if not frozen:
            raise BankError("bank must cover at least one class")
        object.__setattr__(self, "protos", frozen)

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.protos))

    def __getitem__(self, class_id: int) -> tuple[Prototype, ...]:
        return self.protos[class_id]


def _check_congruent(features: Sequence[np.ndarray], grids: Sequence[np.ndarray], what: str) -> None:
    if len(features) != len(grids) or not features:
        raise ShapeError(f"{what}: need equally many feature maps and grids (>= 1)")
    for f, g in zip(features, grids):
        if f.ndim != 3:
            raise ShapeError(f"{what}: feature maps must be (H, W, Z), got {f.shape}")
        if g.shape != f.shape[:2]:
            raise ShapeError(f"{what}: grid {g.shape} does not match feature map {f.shape[:2]}")


def support_prototype(
    features: Sequence[np.ndarray],
    masks: Sequence[np.ndarray],
    class_id: int,
    slice_indices: Sequence[int] | None = None,
) -> Prototype:
    """Masked average pooling over K support slices.

    features: K maps of shape (H, W, Z) at feature resolution.
    masks: K binary grids (H, W) for the class, already at feature resolution.
    Slices whose mask is empty are excluded from the outer average; if all K
    are empty the class is undefined and EmptyClassError is raised.
    """
    _check_congruent(features, masks, "support_prototype")
    indices = tuple(range(len(features))) if slice_indices is None else tuple(slice_indices)
    means = []
    used = []
    pixels = 0
    for idx, f, m in zip(indices, features, masks):
        sel = np.asarray(m) != 0
        n = int(sel.sum())
        if n == 0:
            continue
        means.append(np.asarray(f, dtype=np.float64)[sel].mean(axis=0))
        used.append(idx)
        pixels += n
    if not means:
        raise EmptyClassError(f"class {class_id}: every support slice mask is empty")
    vector = np.mean(means, axis=0)
    return Prototype(class_id, vector, Source.SUPPORT, tuple(used), pixels)


def confident_pixels(
    probs: "ProbabilityMap", pseudo: "PseudoMask", class_id: int, gamma_c: float
) -> np.ndarray:
    """Boolean grid of pixels confident for the class: pseudo-labeled with it
    and with class probability >= gamma_c. Antitone in gamma_c by construction."""
    return (pseudo.labels == class_id) & (probs.prob_of(class_id) >= gamma_c)


def query_prototype(
    features: Sequence[np.ndarray],
    probs: Sequence["ProbabilityMap"],
    pseudo: Sequence["PseudoMask"],
    class_id: int,
    gamma_c: float,
    slice_indices: Sequence[int] | None = None,
) -> Optional[Prototype]:
    """Confidence-filtered masked average pooling over M windowed query slices.

    Pixels confident for the class are pooled per slice; slices without any
    confident pixel drop out of the outer average. Returns None when no slice
    in the window has a confident pixel for the class.
    """
    if not 0.0 <= gamma_c <= 1.0:
        raise ShapeError(f"gamma must lie in [0, 1], got {gamma_c}")
    label_grids = [p.labels for p in pseudo]
    _check_congruent(features, label_grids, "query_prototype")
    if len(probs) != len(features):
        raise ShapeError("query_prototype: need one probability map per feature map")
    indices = tuple(range(len(features))) if slice_indices is None else tuple(slice_indices)
    means = []
    used = []
    pixels = 0
    for idx, f, pm, ps in zip(indices, features, probs, pseudo):
        sel = confident_pixels(pm, ps, class_id, gamma_c)
        n = int(sel.sum())
        if n == 0:
            continue
        means.append(np.asarray(f, dtype=np.float64)[sel].mean(axis=0))
        used.append(idx)
        pixels += n
    if not means:
        return None
    vector = np.mean(means, axis=0)
    return Prototype(class_id, vector, Source.QUERY, tuple(used), pixels)


def build_bank(
    support_protos: Mapping[int, Prototype],
    query_protos: Mapping[int, Optional[Prototype]],
    strategy: Strategy,
) -> PrototypeBank:
    """Assemble the scoring bank per strategy.

    SUPPORT_ONLY ignores query prototypes. QUERY_ONLY uses query prototypes,
    falling back to the class's support prototype (marked as fallback) for
    classes that produced none. SUPPORT_AND_QUERY takes the per-class union.
    """
    if strategy is not Strategy.QUERY_ONLY and not support_protos:
        raise BankError(f"{strategy.name} requires support prototypes")
    classes = set(support_protos) | set(query_protos)
    bank: dict[int, tuple[Prototype, ...]] = {}
    for cid in sorted(classes):
        sup = support_protos.get(cid)
        qry = query_protos.get(cid)
        if strategy is Strategy.SUPPORT_ONLY:
            chosen = (sup,) if sup else ()
        elif strategy is Strategy.QUERY_ONLY:
            if qry is not None:
                chosen = (qry,)
            elif sup is not None:
                chosen = (_as_fallback(sup),)
            else:
                chosen = ()
        else:
            chosen = tuple(p for p in (sup, qry) if p is not None)
        if not chosen:
            raise BankError(f"class {cid} ended up with zero prototypes under {strategy.name}")
        bank[cid] = chosen
    return PrototypeBank(bank)


def _as_fallback(proto: Prototype) -> Prototype:
    return Prototype(
        proto.class_id, proto.vector, proto.source, proto.slice_indices, proto.pixel_count, fallback=True
    )
