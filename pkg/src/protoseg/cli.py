"""protoseg command line: phantom generation, segmentation, ablation tables.

Exit codes: 0 success, 1 internal error, 2 usage/input error. Thread count
comes from --threads or the PROTOSEG_THREADS environment variable.

Note on --iterations: the flag speaks the iteration convention of the
ablation literature this tool mirrors, where "2 iterations" means the
initial segmentation plus ONE pseudo-labeling round (the headline method).
Internally EpisodeConfig.iterations counts pseudo-labeling rounds, so the
flag maps to iterations = N - 1.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import formats
from .core import Episode, EpisodeConfig, Fusion, Strategy, SupportPairing
from .errors import ProtosegError, SpecError
from .evaluate import AblationAxis, ablate, evaluate_episode, ground_truth
from .features import load_embeddings, parse_extractor
from .phantom import (
    EpisodePlan,
    OrganSpec,
    PhantomSpec,
    SupportSelection,
    foreground_range,
    generate,
    plan_episode,
    select_support_slices,
    suite_specs,
)
from .pipeline import run_episode

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2


# ---------------------------------------------------------------------------
# spec / flag parsing helpers
# ---------------------------------------------------------------------------

_SPEC_KEYS = {
    "shape",
    "organs",
    "background_mean",
    "background_std",
    "noise_sigma",
    "texture_scale",
    "intensity_drift",
    "background_drift",
    "background_jitter",
    "seed",
}
_ORGAN_KEYS = {"class_id", "center", "axes", "mean", "std"}
_SUITE_KEYS = {
    "n",
    "base_seed",
    "shape",
    "noise_sigma",
    "texture_scale",
    "intensity_drift",
    "background_drift",
    "background_jitter",
    "k",
    "selection",
}


def phantom_spec_from_json(obj: dict) -> PhantomSpec:
    unknown = set(obj) - _SPEC_KEYS
    if unknown:
        raise SpecError(f"unknown phantom spec keys: {sorted(unknown)}")
    if "shape" not in obj or "organs" not in obj:
        raise SpecError("phantom spec requires 'shape' and 'organs'")
    organs = []
    for entry in obj["organs"]:
        bad = set(entry) - _ORGAN_KEYS
        if bad:
            raise SpecError(f"unknown organ keys: {sorted(bad)}")
        organs.append(
            OrganSpec(
                class_id=int(entry["class_id"]),
                center=tuple(float(v) for v in entry["center"]),
                axes=tuple(float(v) for v in entry["axes"]),
                mean=float(entry["mean"]),
                std=float(entry.get("std", 0.0)),
            )
        )
    kwargs = {k: obj[k] for k in obj if k not in ("shape", "organs")}
    return PhantomSpec(shape=tuple(obj["shape"]), organs=tuple(organs), **kwargs)


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _parse_gamma(text: str):
    if ":" in text:
        mapping = {}
        for item in text.split(","):
            cid, _, val = item.partition(":")
            mapping[int(cid)] = float(val)
        return mapping
    return float(text)


def _parse_window(text: str):
    if text.strip().lower() == "all":
        return None
    return int(text)


def _parse_slices(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _enum_choice(enum_cls, text: str):
    try:
        return enum_cls[text.strip().upper()]
    except KeyError:
        names = ", ".join(e.name for e in enum_cls)
        raise SpecError(f"invalid {enum_cls.__name__} {text!r}; choose from {names}") from None


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    env = os.environ.get("PROTOSEG_THREADS", "")
    return max(1, int(env)) if env.isdigit() else 1


def _config_from_args(args) -> EpisodeConfig:
    if args.iterations < 2:
        raise SpecError(
            "--iterations uses the paper-style count and must be >= 2 "
            "(2 = one pseudo-labeling round; use --strategy SUPPORT_ONLY for prototype-only inference)"
        )
    return EpisodeConfig(
        gamma=_parse_gamma(args.gamma),
        window_radius=_parse_window(args.window),
        iterations=args.iterations - 1,
        strategy=_enum_choice(Strategy, args.strategy),
        alpha=args.alpha,
        fusion=_enum_choice(Fusion, args.fusion),
        pairing=_enum_choice(SupportPairing, args.pairing),
    )


def _resolve_extractor(text: str):
    """--extractor accepts a builtin spec, a 'support.featvol,query.featvol'
    pair, or a directory holding support.featvol and query.featvol."""
    path = Path(text)
    if "," in text and not path.exists():
        sup_path, _, qry_path = text.partition(",")
        return None, load_embeddings(sup_path.strip()), load_embeddings(qry_path.strip())
    if path.is_dir():
        return None, load_embeddings(path / "support.featvol"), load_embeddings(path / "query.featvol")
    if path.is_file():
        raise SpecError(
            f"{text}: a single FEATVOL cannot cover both volumes; pass "
            "'support.featvol,query.featvol' or a directory with both files"
        )
    return parse_extractor(text), None, None


# ---------------------------------------------------------------------------
# phantom-gen
# ---------------------------------------------------------------------------

def _write_episode_dir(dirpath: Path, plan: EpisodePlan, seed: int, query_seed: int) -> None:
    dirpath.mkdir(parents=True, exist_ok=True)
    formats.write_volume(dirpath / "support_volume.volraw", plan.support_volume)
    formats.write_mask(dirpath / "support_labels.maskraw", plan.support_mask)
    formats.write_volume(dirpath / "query_volume.volraw", plan.query_volume)
    formats.write_mask(dirpath / "query_labels.maskraw", plan.query_mask)
    meta = {
        "k": len(plan.support_slices),
        "support_slices": list(plan.support_slices),
        "class_set": list(plan.class_set),
        "class_slice_range": list(plan.class_slice_range) if plan.class_slice_range else None,
        "seed": seed,
        "query_seed": query_seed,
    }
    (dirpath / "episode.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", "utf-8")


def cmd_phantom_gen(args) -> int:
    obj = _load_json(args.spec)
    out_dir = Path(args.out_dir)
    selection = _enum_choice(SupportSelection, args.selection)
    shots = args.shots

    if "suite" in obj:
        suite = dict(obj["suite"])
        unknown = set(suite) - _SUITE_KEYS
        if unknown:
            raise SpecError(f"unknown suite keys: {sorted(unknown)}")
        shots = int(suite.pop("k", shots))
        if "selection" in suite:
            selection = _enum_choice(SupportSelection, suite.pop("selection"))
        if "shape" in suite:
            suite["shape"] = tuple(suite["shape"])
        specs = suite_specs(**suite)
    elif args.episodes:
        base = phantom_spec_from_json(obj)
        specs = [dataclasses.replace(base, seed=base.seed + 7919 * e) for e in range(args.episodes)]
    else:
        spec = phantom_spec_from_json(obj)
        vol, mask = generate(spec)
        out_dir.mkdir(parents=True, exist_ok=True)
        formats.write_volume(out_dir / "volume.volraw", vol)
        formats.write_mask(out_dir / "labels.maskraw", mask)
        print(f"wrote {out_dir / 'volume.volraw'} and {out_dir / 'labels.maskraw'}")
        return EXIT_OK

    for e, spec in enumerate(specs):
        plan = plan_episode(spec, k=shots, selection=selection)
        _write_episode_dir(out_dir / f"ep{e:03d}", plan, spec.seed, spec.seed + 1)
    print(f"wrote {len(specs)} episode dir(s) under {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# segment
# ---------------------------------------------------------------------------

def _build_episode(args) -> Episode:
    support_vol = formats.read_volume(args.support_vol)
    support_mask = formats.read_mask(args.support_mask)
    support_mask.check_congruent(support_vol)
    query_vol = formats.read_volume(args.query_vol)
    truth = formats.read_mask(args.query_truth) if args.query_truth else None

    if args.support_slices:
        idx = _parse_slices(args.support_slices)
        bad = [i for i in idx if not 0 <= i < support_vol.num_slices]
        if bad:
            raise SpecError(f"support slice indices {bad} outside the support volume")
    else:
        idx = select_support_slices(support_mask, args.shots, _enum_choice(SupportSelection, args.selection))

    classes = set(support_mask.present_classes()) | {0}
    if truth is not None:
        classes |= set(truth.present_classes())
    class_range = tuple(_parse_slices(args.class_range)) if args.class_range else None
    if class_range is not None and len(class_range) != 2:
        raise SpecError("--class-range expects 'lo,hi'")
    return Episode(
        support_images=support_vol.data[list(idx)],
        support_masks=support_mask.data[list(idx)],
        query=query_vol,
        class_set=tuple(sorted(classes)),
        class_slice_range=class_range,
        truth=truth,
    )


def cmd_segment(args) -> int:
    config = _config_from_args(args)
    extractor, support_fv, query_fv = _resolve_extractor(args.extractor)
    episode = _build_episode(args)
    result = run_episode(
        episode,
        extractor,
        config,
        threads=_threads(args),
        support_features=support_fv,
        query_features=query_fv,
    )
    sidecar = {
        "config": {
            "gamma": _parse_gamma(args.gamma),
            "window": "ALL" if config.window_radius is None else config.window_radius,
            "iterations": args.iterations,
            "pseudo_label_rounds": config.iterations,
            "strategy": config.strategy.name,
            "alpha": config.alpha,
            "fusion": config.fusion.name,
            "pairing": config.pairing.name,
            "extractor": args.extractor,
        },
        "class_set": list(episode.class_set),
        "provenance": result.provenance,
        "confident_pixels_per_slice": list(result.confident_counts),
    }
    formats.write_result(args.out, result.masks, sidecar)
    print(f"wrote {args.out} (+ sidecar {formats.sidecar_path(args.out)})")
    if args.query_truth:
        rows = evaluate_episode(result, ground_truth(episode))
        for row in rows:
            print(f"class {row.class_id} dice: {row.value:.4f}")
        if rows:
            print(f"mean dice: {np.mean([r.value for r in rows]):.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

def _episode_from_dir(dirpath: Path) -> Episode:
    meta = _load_json(dirpath / "episode.json")
    support_vol = formats.read_volume(dirpath / "support_volume.volraw")
    support_mask = formats.read_mask(dirpath / "support_labels.maskraw")
    query_vol = formats.read_volume(dirpath / "query_volume.volraw")
    query_mask = formats.read_mask(dirpath / "query_labels.maskraw")
    idx = [int(i) for i in meta["support_slices"]]
    rng = meta.get("class_slice_range")
    return Episode(
        support_images=support_vol.data[idx],
        support_masks=support_mask.data[idx],
        query=query_vol,
        class_set=tuple(int(c) for c in meta["class_set"]),
        class_slice_range=tuple(rng) if rng else foreground_range(query_mask),
        truth=query_mask,
    )


def _load_suite(suite_dir: Path) -> list[Episode]:
    if not suite_dir.is_dir():
        raise SpecError(f"suite directory {suite_dir} does not exist")
    if (suite_dir / "episode.json").exists():
        return [_episode_from_dir(suite_dir)]
    dirs = sorted(d for d in suite_dir.iterdir() if d.is_dir() and (d / "episode.json").exists())
    if not dirs:
        raise SpecError(f"suite directory {suite_dir} contains no episodes")
    return [_episode_from_dir(d) for d in dirs]


def cmd_ablate(args) -> int:
    episodes = _load_suite(Path(args.suite))
    axis = _enum_choice(AblationAxis, args.axis)
    extractor, support_fv, query_fv = _resolve_extractor(args.extractor)
    if extractor is None or support_fv is not None or query_fv is not None:
        raise SpecError("ablate requires a builtin extractor (per-episode FEATVOLs are not supported)")
    config = _config_from_args(args)
    values = None
    if args.values:
        raw = args.values.split(",")
        if axis is AblationAxis.WINDOW:
            values = [_parse_window(v) for v in raw]
        elif axis is AblationAxis.ITERATIONS:
            values = [int(v) for v in raw]
        else:
            values = [_enum_choice(Strategy, v) for v in raw]
    table = ablate(episodes, axis, extractor, config, values=values, threads=_threads(args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table.to_csv(), encoding="utf-8")
    print(f"wrote {out}")
    if not args.no_plot:
        from .plots import render_ablation_figure

        fig_path = out.with_suffix(".png")
        render_ablation_figure(table, fig_path)
        print(f"wrote {fig_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gamma", default="0.95", help="confidence threshold, or per-class 'c:g,c:g' (default 0.95)")
    p.add_argument("--window", default="7", help="window radius m, or 'all' (default 7)")
    p.add_argument(
        "--iterations",
        type=int,
        default=2,
        help="iteration count, paper convention: 2 = one pseudo-labeling round (default 2)",
    )
    p.add_argument("--strategy", default="SUPPORT_AND_QUERY", help="SUPPORT_ONLY | QUERY_ONLY | SUPPORT_AND_QUERY")
    p.add_argument("--alpha", type=float, default=20.0, help="cosine similarity scale (default 20)")
    p.add_argument("--fusion", default="MAX", help="multi-prototype fusion: MAX | MEAN (default MAX)")
    p.add_argument("--pairing", default="ALL_K", help="support pairing: ALL_K | K_CHUNK (default ALL_K)")
    p.add_argument("--threads", type=int, default=0, help="worker threads (default: PROTOSEG_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protoseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    pg = sub.add_parser("phantom-gen", help="generate synthetic phantom volumes or episode suites")
    pg.add_argument("--spec", required=True, help="phantom spec JSON (or {'suite': {...}} for a suite)")
    pg.add_argument("--out-dir", required=True)
    pg.add_argument("--episodes", type=int, default=0, help="emit N episode dirs instead of one volume pair")
    pg.add_argument("--shots", type=int, default=3, help="support slices per episode (default 3)")
    pg.add_argument("--selection", default="EVENLY_SPACED", help="EVENLY_SPACED | CENTER_BLOCK")
    pg.set_defaults(func=cmd_phantom_gen)

    sg = sub.add_parser("segment", help="segment a query volume from K annotated support slices")
    sg.add_argument("--support-vol", required=True)
    sg.add_argument("--support-mask", required=True)
    sg.add_argument("--query-vol", required=True)
    sg.add_argument("--query-truth", default=None, help="optional ground truth; prints per-class Dice")
    sg.add_argument(
        "--extractor",
        default="multiscale:d=2",
        help="builtin spec (raw|multiscale|patchstat[:params]) or precomputed "
        "'support.featvol,query.featvol' / directory with both",
    )
    sg.add_argument("--support-slices", default=None, help="comma-separated annotated slice indices")
    sg.add_argument("--shots", type=int, default=3, help="K when --support-slices is omitted (default 3)")
    sg.add_argument("--selection", default="EVENLY_SPACED", help="EVENLY_SPACED | CENTER_BLOCK")
    sg.add_argument("--class-range", default=None, help="query foreground slice range 'lo,hi' (K_CHUNK pairing)")
    sg.add_argument("--out", required=True, help="RESULT path (MASKRAW + <out>.json sidecar)")
    _add_config_flags(sg)
    sg.set_defaults(func=cmd_segment)

    ab = sub.add_parser("ablate", help="sweep one axis over an episode suite and emit a CSV (+ figure)")
    ab.add_argument("--suite", required=True, help="directory of episode dirs (from phantom-gen --episodes)")
    ab.add_argument("--axis", required=True, help="window | iterations | strategy")
    ab.add_argument("--out", required=True, help="CSV path; figure lands next to it as .png")
    ab.add_argument("--values", default=None, help="override axis values, comma-separated")
    ab.add_argument("--extractor", default="multiscale:d=2")
    ab.add_argument("--no-plot", action="store_true", help="skip the matplotlib figure")
    _add_config_flags(ab)
    ab.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ProtosegError as exc:
        print(f"protoseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"protoseg: error: missing file: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except json.JSONDecodeError as exc:
        print(f"protoseg: error: malformed JSON: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # pragma: no cover - internal failures
        print(f"protoseg: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
