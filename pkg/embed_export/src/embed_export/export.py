"""Slice-by-slice feature export: VOLRAW in, FEATVOL + JSON sidecar out.

The exporter never resizes, normalizes masks, or predicts anything; it is a
pure feature dumper. Output is written atomically (temp file + rename) so a
failed export leaves no partial FEATVOL behind, and a sidecar at
<out>.json records the configuration and the SHA-256 of the written file.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .formats import FormatError, read_volume, write_featvol
from .models import ModelError, resolve_model


@dataclass
class ExportConfig:
    model: str = "identity"  # 'identity' | TorchScript path | torchvision:<name>
    layer: str = ""  # submodule to tap; empty taps the module output
    checkpoint: str | None = None
    mean: float = 0.0  # input normalization: (x - mean) / std
    std: float = 1.0
    in_channels: int = 1  # slice gets repeated to this many input channels
    out: str = "features.featvol"
    extra: dict = field(default_factory=dict)  # echoed into the sidecar


def export(volume_path, config: ExportConfig) -> Path:
    """Run the backbone over every slice and write the FEATVOL; returns the
    output path. Aborts without writing on shape drift or non-finite values."""
    volume = read_volume(volume_path)
    runner = resolve_model(
        config.model,
        layer=config.layer,
        checkpoint=config.checkpoint,
        mean=config.mean,
        std=config.std,
        in_channels=config.in_channels,
    )
    maps = []
    expected = None
    for z in range(volume.shape[0]):
        fmap = np.asarray(runner.run(volume[z]), dtype=np.float32)
        if fmap.ndim != 3:
            raise ModelError(f"slice {z}: feature map must be (H, W, Z), got {fmap.shape}")
        if expected is None:
            expected = fmap.shape
        elif fmap.shape != expected:
            raise ModelError(f"slice {z}: feature shape drifted from {expected} to {fmap.shape}")
        if not np.isfinite(fmap).all():
            raise ModelError(f"slice {z}: non-finite activations; aborting export")
        maps.append(fmap)
    features = np.stack(maps, axis=0)

    out = Path(config.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    try:
        write_featvol(tmp, features, source_shape=volume.shape[1:])
        os.replace(tmp, out)
    finally:
        if tmp.exists():
            tmp.unlink()

    sidecar = {
        "model": runner.name,
        "layer": config.layer,
        "checkpoint": config.checkpoint,
        "normalization": {"mean": config.mean, "std": config.std},
        "in_channels": config.in_channels,
        "source_volume": str(volume_path),
        "dims": [int(d) for d in features.shape],
        "sha256": hashlib.sha256(out.read_bytes()).hexdigest(),
        **config.extra,
    }
    Path(str(out) + ".json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n", "utf-8")
    return out


__all__ = ["ExportConfig", "export", "FormatError", "ModelError"]
