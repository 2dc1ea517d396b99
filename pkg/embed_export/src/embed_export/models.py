"""Backbone resolution and layer tapping.

Three model forms are accepted:

- ``identity``: no network at all; each slice passes through unchanged
  (Z=1). Useful for wiring tests and as a format bridge.
- a TorchScript file (``.pt``/``.ts``): loaded with torch.jit.load; the
  module's own output is the tap.
- ``torchvision:<name>`` (e.g. ``torchvision:resnet18``): built with random
  init unless a ``checkpoint`` state dict is supplied; ``layer`` selects the
  submodule to tap via a forward hook.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


class ModelError(ValueError):
    pass


@dataclass
class SliceRunner:
    """Callable producing one (H, W, Z) float32 feature map per slice array."""

    name: str
    run: callable  # (np.ndarray (H, W)) -> np.ndarray (H', W', Z)


def _torch():
    try:
        import torch
    except ImportError as exc:  # pragma: no cover - torch is a hard dep
        raise ModelError("torch is required for any model other than 'identity'") from exc
    return torch


def _identity_runner() -> SliceRunner:
    import numpy as np

    return SliceRunner("identity", lambda img: np.asarray(img, dtype=np.float32)[..., None])


def _tensor_runner(name, module, layer, mean, std, in_channels) -> SliceRunner:
    torch = _torch()
    import numpy as np

    module.eval()
    tap = None
    if layer:
        submodules = dict(module.named_modules())
        if layer not in submodules:
            known = ", ".join(sorted(k for k in submodules if k)) or "<none>"
            raise ModelError(f"layer {layer!r} not found; known layers: {known}")
        tap = submodules[layer]

    def run(img: "np.ndarray") -> "np.ndarray":
        x = torch.from_numpy(np.array(img, dtype=np.float32))  # copy: input buffers may be read-only
        x = (x - mean) / std
        x = x[None, None].repeat(1, in_channels, 1, 1)
        grabbed = []
        handle = None
        if tap is not None:
            handle = tap.register_forward_hook(lambda _m, _i, out: grabbed.append(out))
        try:
            with torch.no_grad():
                out = module(x)
        finally:
            if handle is not None:
                handle.remove()
        tensor = grabbed[0] if grabbed else out
        if not torch.is_tensor(tensor):
            raise ModelError(f"tapped output of {name!r} is not a tensor")
        if tensor.dim() == 4 and tensor.shape[0] == 1:
            tensor = tensor[0]
        if tensor.dim() != 3:
            raise ModelError(f"tapped tensor must be (C, H, W) per slice, got {tuple(tensor.shape)}")
        return tensor.permute(1, 2, 0).contiguous().numpy().astype(np.float32)

    return SliceRunner(name, run)


def resolve_model(
    model: str,
    layer: str = "",
    checkpoint: str | None = None,
    mean: float = 0.0,
    std: float = 1.0,
    in_channels: int = 1,
) -> SliceRunner:
    if std == 0:
        raise ModelError("normalization std must be nonzero")
    if model == "identity":
        return _identity_runner()
    if model.startswith("torchvision:"):
        torch = _torch()
        try:
            from torchvision import models as tv_models
        except ImportError as exc:
            raise ModelError("torchvision is not installed; cannot build named models") from exc
        arch = model.split(":", 1)[1]
        factory = getattr(tv_models, arch, None)
        if factory is None:
            raise ModelError(f"unknown torchvision model {arch!r}")
        net = factory(weights=None)
        if checkpoint:
            state = torch.load(checkpoint, map_location="cpu", weights_only=True)
            net.load_state_dict(state)
        return _tensor_runner(model, net, layer, mean, std, in_channels)
    path = Path(model)
    if path.exists():
        torch = _torch()
        module = torch.jit.load(str(path), map_location="cpu")
        return _tensor_runner(path.name, module, layer, mean, std, in_channels)
    raise ModelError(
        f"model {model!r} is neither 'identity', a torchvision:<name>, nor an existing TorchScript file"
    )
