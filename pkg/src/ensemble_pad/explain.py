"""Grad-CAM saliency for ensemble members.

Channel weights are the spatial means of d(score)/d(activation) over the
chosen conv block's output; the map is ReLU of the weighted channel sum,
bilinearly upsampled to the member's input size and max-normalised. The
attack score is the negated logit.
"""
from __future__ import annotations

import copy
import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import BadAlpha, ModelTooLarge, ShapeMismatch
from .frames import RegionView
from .imaging import resize_bilinear, save_image
from .model import INPUT_SHIFT, MemberNet, to_tensor

MAX_FD_ENTRIES = 10_000


class CamTarget(str, enum.Enum):
    BONAFIDE = "bonafide_score"
    ATTACK = "attack_score"


@dataclass(frozen=True)
class GradCamConfig:
    target: CamTarget = CamTarget.BONAFIDE
    layer: int = -1

    def __post_init__(self):
        object.__setattr__(self, "target", CamTarget(self.target))


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray
    raw_max: float
    member_id: str
    target: CamTarget

    def sidecar(self) -> dict:
        return {"raw_max": self.raw_max, "member_id": self.member_id, "target": self.target.value}


def _pixels(model: MemberNet, view) -> np.ndarray:
    pixels = view.pixels if isinstance(view, RegionView) else np.asarray(view)
    bb = model.config.backbone
    if pixels.shape != (*bb.input_resolution, bb.in_channels):
        raise ShapeMismatch(f"view {pixels.shape} does not match member input {bb.input_resolution}")
    return pixels


def _split_point(model: MemberNet, layer: int) -> int:
    n_blocks = len(model.config.backbone.conv_blocks)
    block = layer if layer >= 0 else n_blocks + layer
    if not 0 <= block < n_blocks:
        raise IndexError(f"conv block {layer} out of range for {n_blocks} blocks")
    return 2 * (block + 1)  # each block is Conv2d + ReLU


def activations(model: MemberNet, view, layer: int = -1) -> torch.Tensor:
    """Post-ReLU output of conv block ``layer`` for one view, shape (1, C, h, w)."""
    dtype = next(model.parameters()).dtype
    x = to_tensor(_pixels(model, view), dtype)
    with torch.no_grad():
        return model.features[:_split_point(model, layer)](x - INPUT_SHIFT)


def score_from_activations(model: MemberNet, acts: torch.Tensor, target: CamTarget, layer: int = -1) -> torch.Tensor:
    rest = model.features[_split_point(model, layer):]
    logit = model.classify(rest(acts))
    return -logit if CamTarget(target) is CamTarget.ATTACK else logit


def activation_gradient(model: MemberNet, view, target: CamTarget | str = CamTarget.BONAFIDE,
                        layer: int = -1) -> tuple[np.ndarray, np.ndarray]:
    """(activations, d score / d activations), each shaped (C, h, w)."""
    was_training = model.training
    model.eval()
    try:
        acts = activations(model, view, layer).clone().requires_grad_(True)
        score = score_from_activations(model, acts, target, layer).sum()
        (grad,) = torch.autograd.grad(score, acts)
    finally:
        model.train(was_training)
    return acts.detach()[0].double().numpy(), grad[0].double().numpy()


def finite_difference_gradient(model: MemberNet, view, target: CamTarget | str = CamTarget.BONAFIDE,
                               step: float = 1e-4, layer: int = -1) -> np.ndarray:
    """Central differences of the target score w.r.t. every activation entry,
    evaluated in float64 on a copy of the model."""
    if not step > 0:
        raise ValueError("step must be positive")
    model64 = copy.deepcopy(model).double().eval()
    base = activations(model64, view, layer)
    if base.numel() > MAX_FD_ENTRIES:
        raise ModelTooLarge(f"{base.numel()} activation entries exceed {MAX_FD_ENTRIES}")
    flat = base.reshape(-1)
    grad = np.zeros(flat.numel())
    with torch.no_grad():
        for i in range(flat.numel()):
            plus = flat.clone()
            minus = flat.clone()
            plus[i] += step
            minus[i] -= step
            f_plus = float(score_from_activations(model64, plus.reshape(base.shape), target, layer))
            f_minus = float(score_from_activations(model64, minus.reshape(base.shape), target, layer))
            grad[i] = (f_plus - f_minus) / (2 * step)
    return grad.reshape(base.shape[1:])


def cam_from_gradients(acts: np.ndarray, grads: np.ndarray) -> np.ndarray:
    weights = grads.mean(axis=(1, 2))
    return np.maximum(np.tensordot(weights, acts, axes=1), 0.0)


def grad_cam(model: MemberNet, view, config: GradCamConfig = GradCamConfig()) -> SaliencyMap:
    acts, grads = activation_gradient(model, view, config.target, config.layer)
    cam = cam_from_gradients(acts, grads)
    raw_max = float(cam.max()) if cam.size else 0.0
    up = resize_bilinear(cam, model.config.backbone.input_resolution)
    peak = float(up.max())
    values = up / peak if raw_max > 0 and peak > 0 else np.zeros_like(up)
    return SaliencyMap(values, raw_max, model.member_id, config.target)


# -- rendering ---------------------------------------------------------------------

def colormap(m: np.ndarray) -> np.ndarray:
    """Blue (m=0) -> green (m=0.5) -> red (m=1)."""
    m = np.clip(np.asarray(m, dtype=np.float64), 0.0, 1.0)
    return np.stack([m, 1.0 - np.abs(2.0 * m - 1.0), 1.0 - m], axis=-1)


def overlay_heatmap(frame: np.ndarray, saliency: SaliencyMap | np.ndarray, alpha: float = 0.5) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise BadAlpha(f"alpha {alpha} outside [0, 1]")
    frame = np.asarray(frame, dtype=np.float64)
    m = saliency.values if isinstance(saliency, SaliencyMap) else np.asarray(saliency, dtype=np.float64)
    if m.shape != frame.shape[:2]:
        m = resize_bilinear(m, frame.shape[:2])
    weight = (alpha * m)[..., None]
    if frame.ndim == 2:
        frame = frame[..., None].repeat(3, axis=2)
    return (1.0 - weight) * frame + weight * colormap(m)


def write_heatmap(saliency: SaliencyMap, frame: np.ndarray, out_dir, stem: str, alpha: float = 0.5) -> dict:
    """Write ``<stem>_overlay.png``, ``<stem>_map.png`` and ``<stem>.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "overlay": out_dir / f"{stem}_overlay.png",
        "map": out_dir / f"{stem}_map.png",
        "sidecar": out_dir / f"{stem}.json",
    }
    save_image(overlay_heatmap(frame, saliency, alpha), paths["overlay"])
    save_image(saliency.values, paths["map"])
    paths["sidecar"].write_text(json.dumps(saliency.sidecar(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {k: str(v) for k, v in paths.items()}
