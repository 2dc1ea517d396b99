"""embed-export command line."""
from __future__ import annotations

import argparse
import sys

from .export import ExportConfig, FormatError, ModelError, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Run a 2D CNN backbone over a VOLRAW volume slice by slice "
        "and write the activations as a FEATVOL file (+ JSON sidecar).",
    )
    parser.add_argument("--volume", required=True, help="input VOLRAW path")
    parser.add_argument(
        "--model",
        default="identity",
        help="'identity', a TorchScript file, or torchvision:<name> (default identity)",
    )
    parser.add_argument("--layer", default="", help="submodule to tap; empty taps the model output")
    parser.add_argument("--checkpoint", default=None, help="state-dict path for torchvision models")
    parser.add_argument("--mean", type=float, default=0.0, help="input normalization mean")
    parser.add_argument("--std", type=float, default=1.0, help="input normalization std")
    parser.add_argument("--in-channels", type=int, default=1, help="replicate the slice to N channels")
    parser.add_argument("--out", required=True, help="output FEATVOL path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = ExportConfig(
        model=args.model,
        layer=args.layer,
        checkpoint=args.checkpoint,
        mean=args.mean,
        std=args.std,
        in_channels=args.in_channels,
        out=args.out,
    )
    try:
        out = export(args.volume, config)
    except (FormatError, ModelError) as exc:
        print(f"embed-export: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"embed-export: error: missing file: {exc.filename}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - internal failures
        print(f"embed-export: internal error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {out} (+ sidecar {out}.json)")
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
