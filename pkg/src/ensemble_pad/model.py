"""One ensemble member: a light CNN with a dropout dense head and one logit.

Includes the BCE objective, the Adam training loop and checkpoint files.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .augment import AugmentationConfig, AugmentationSampler
from .errors import (
    ConfigMismatch,
    CorruptCheckpoint,
    InvalidConfig,
    MissingFile,
    NonFiniteLoss,
    ShapeMismatch,
    SingleClassTrainingSet,
    SpatialCollapse,
)
from .frames import DEFAULT_RESOLUTION, RegionKind, RegionView
from .imaging import resize_bilinear

log = logging.getLogger(__name__)

P_CLAMP = 1e-7
INPUT_SHIFT = 0.5
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class BackboneConfig:
    input_resolution: tuple[int, int] = DEFAULT_RESOLUTION
    conv_blocks: tuple[tuple[int, int, int], ...] = ((16, 3, 2), (32, 3, 2), (64, 3, 2))
    dense_units: int = 64
    dropout_rate: float = 0.5
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "input_resolution", tuple(int(v) for v in self.input_resolution))
        object.__setattr__(self, "conv_blocks", tuple(tuple(int(v) for v in b) for b in self.conv_blocks))
        if len(self.conv_blocks) < 1:
            raise InvalidConfig("need at least one conv block")
        if any(len(b) != 3 or min(b) < 1 for b in self.conv_blocks):
            raise InvalidConfig(f"conv blocks must be positive (channels, kernel, stride): {self.conv_blocks}")
        if self.dense_units < 1 or self.in_channels < 1:
            raise InvalidConfig("dense_units and in_channels must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfig(f"dropout_rate {self.dropout_rate} outside [0, 1)")
        if min(self.input_resolution) < 1 or len(self.input_resolution) != 2:
            raise InvalidConfig(f"bad input_resolution {self.input_resolution}")

    def feature_shape(self) -> tuple[int, int, int]:
        """(channels, height, width) of the last conv block's output."""
        h, w = self.input_resolution
        for i, (_, k, s) in enumerate(self.conv_blocks):
            h = (h - k) // s + 1 if h >= k else 0
            w = (w - k) // s + 1 if w >= k else 0
            if h < 1 or w < 1:
                raise SpatialCollapse(f"conv block {i} reduces {self.input_resolution} below 1x1")
        return self.conv_blocks[-1][0], h, w


@dataclass(frozen=True)
class MemberConfig:
    region: RegionKind
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    member_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "region", RegionKind(self.region))
        if not self.member_id:
            object.__setattr__(self, "member_id", self.region.value)

    def to_dict(self) -> dict:
        b = asdict(self.backbone)
        b["input_resolution"] = list(b["input_resolution"])
        b["conv_blocks"] = [list(x) for x in b["conv_blocks"]]
        return {"member_id": self.member_id, "region": self.region.value, "backbone": b}

    @classmethod
    def from_dict(cls, d: dict) -> "MemberConfig":
        return cls(RegionKind(d["region"]), BackboneConfig(**d["backbone"]), d["member_id"])


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise InvalidConfig("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidConfig("betas must lie in [0, 1)")
        if not self.epsilon > 0:
            raise InvalidConfig("epsilon must be > 0")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be positive")
        if self.epochs < 1:
            raise InvalidConfig("epochs must be positive")
        if self.seed < 0:
            raise InvalidConfig("seed must be unsigned")


@dataclass(frozen=True)
class EpochStats:
    train_loss: float
    val_loss: float
    val_acer: float


@dataclass
class TrainingRecord:
    epochs: list[EpochStats] = field(default_factory=list)

    def to_list(self) -> list[dict]:
        return [asdict(e) for e in self.epochs]


@dataclass(frozen=True)
class MemberScore:
    member_id: str
    p_bonafide: float


class MemberNet(nn.Module):
    """Conv blocks (valid padding, ReLU) -> global average pool -> dense ReLU
    -> dropout -> one logit. Positive logits favour bonafide.

    Pixels in [0, 1] are shifted by -0.5 before the first convolution.
    """

    def __init__(self, config: MemberConfig):
        super().__init__()
        self.config = config
        bb = config.backbone
        bb.feature_shape()
        layers = []
        cin = bb.in_channels
        for cout, k, s in bb.conv_blocks:
            layers += [nn.Conv2d(cin, cout, k, stride=s), nn.ReLU()]
            cin = cout
        self.features = nn.Sequential(*layers)
        self.dense = nn.Linear(cin, bb.dense_units)
        self.head = nn.Linear(bb.dense_units, 1)

    @property
    def member_id(self) -> str:
        return self.config.member_id

    def classify(self, activations: torch.Tensor, dropout: torch.Generator | None = None) -> torch.Tensor:
        """Logits from final conv activations ``(N, C, h, w)``."""
        pooled = activations.mean(dim=(2, 3))
        hidden = torch.relu(self.dense(pooled))
        p = self.config.backbone.dropout_rate
        if self.training and p > 0:
            keep = torch.rand(hidden.shape, generator=dropout, dtype=hidden.dtype) >= p
            hidden = hidden * keep / (1.0 - p)
        return self.head(hidden).squeeze(1)

    def forward(self, x: torch.Tensor, dropout: torch.Generator | None = None) -> torch.Tensor:
        return self.classify(self.features(x - INPUT_SHIFT), dropout)


def build_model(config: MemberConfig, seed: int = 0) -> MemberNet:
    """He-uniform weights, zero biases, drawn from a generator seeded by ``seed``."""
    model = MemberNet(config)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            else:
                fan_in = p[0].numel()
                bound = math.sqrt(6.0 / fan_in)
                p.copy_(torch.rand(p.shape, generator=gen, dtype=p.dtype) * 2 * bound - bound)
    model.eval()
    return model


# -- loss ------------------------------------------------------------------------

def bce_loss(p: float, y: int) -> float:
    p = min(max(float(p), P_CLAMP), 1.0 - P_CLAMP)
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


def bce_batch(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    p = torch.sigmoid(logits).clamp(P_CLAMP, 1.0 - P_CLAMP)
    return -(targets * torch.log(p) + (1 - targets) * torch.log(1 - p)).mean()


# -- inference -------------------------------------------------------------------

def to_tensor(images: np.ndarray | Sequence[np.ndarray], dtype=torch.float32) -> torch.Tensor:
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def _check_view(model: MemberNet, pixels: np.ndarray) -> None:
    bb = model.config.backbone
    expected = (*bb.input_resolution, bb.in_channels)
    if tuple(pixels.shape[-3:]) != expected:
        raise ShapeMismatch(f"view {pixels.shape[-3:]} but member {model.member_id} expects {expected}")


def predict_proba(model: MemberNet, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Bonafide probabilities for a stack of (H, W, C) images, dropout off."""
    images = np.asarray(images)
    _check_view(model, images)
    if images.ndim == 3:
        images = images[None]
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            out.append(torch.sigmoid(model(to_tensor(images[i:i + batch_size], dtype))).double().numpy())
    return np.concatenate(out) if out else np.zeros(0)


def predict_member(model: MemberNet, view: RegionView | np.ndarray) -> MemberScore:
    pixels = view.pixels if isinstance(view, RegionView) else np.asarray(view)
    if isinstance(view, RegionView) and view.kind is not model.config.region:
        raise ShapeMismatch(f"{view.kind.value} view fed to {model.config.region.value} member")
    p = float(predict_proba(model, pixels)[0])
    return MemberScore(model.member_id, p)


# -- training --------------------------------------------------------------------

def _acer_at_half(p: np.ndarray, y: np.ndarray) -> float:
    pred = p >= 0.5
    attacks = y == 0
    bona = y == 1
    apcer = float(pred[attacks].mean()) if attacks.any() else 0.0
    bpcer = float((~pred[bona]).mean()) if bona.any() else 0.0
    return (apcer + bpcer) / 2


def fit_member(
    config: MemberConfig,
    tconfig: TrainingConfig,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
    augmentation: AugmentationConfig | None = None,
    on_epoch: Callable[[int, EpochStats], None] | None = None,
) -> tuple[MemberNet, TrainingRecord]:
    """Train one member on pre-extracted region views.

    ``x_*`` are (N, H, W, C) arrays, ``y_*`` hold 1 for bonafide and 0 for
    attack. Validation statistics fall back to the training set when no
    validation data is given.
    """
    x_train = np.asarray(x_train, dtype=np.float32)
    y_train = np.asarray(y_train, dtype=np.float64)
    if len(np.unique(y_train)) < 2:
        raise SingleClassTrainingSet(f"member {config.member_id}: training labels {np.unique(y_train).tolist()}")
    if x_val is None or len(x_val) == 0:
        x_val, y_val = x_train, y_train
    y_val = np.asarray(y_val, dtype=np.float64)

    model = build_model(config, tconfig.seed)
    _check_view(model, x_train)
    optimizer = torch.optim.Adam(model.parameters(), lr=tconfig.learning_rate,
                                 betas=(tconfig.beta1, tconfig.beta2), eps=tconfig.epsilon)
    order_rng = np.random.default_rng(tconfig.seed)
    dropout_gen = torch.Generator().manual_seed(tconfig.seed + 1)
    sampler = AugmentationSampler(augmentation) if augmentation is not None else None
    size = config.backbone.input_resolution
    record = TrainingRecord()

    for epoch in range(tconfig.epochs):
        model.train()
        order = order_rng.permutation(len(x_train))
        total = 0.0
        for start in range(0, len(order), tconfig.batch_size):
            idx = order[start:start + tconfig.batch_size]
            batch = x_train[idx]
            if sampler is not None:
                batch = np.stack([resize_bilinear(sampler(img), size) for img in batch])
            logits = model(to_tensor(batch), dropout_gen)
            loss = bce_batch(logits, torch.from_numpy(y_train[idx]).float())
            if not torch.isfinite(loss):
                raise NonFiniteLoss(epoch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(idx)
        model.eval()
        p_val = predict_proba(model, x_val)
        val_loss = float(np.mean([bce_loss(p, int(y)) for p, y in zip(p_val, y_val)]))
        if not math.isfinite(val_loss):
            raise NonFiniteLoss(epoch)
        stats = EpochStats(total / len(order), val_loss, _acer_at_half(p_val, y_val))
        record.epochs.append(stats)
        log.info("member %s epoch %d: train_loss=%.4f val_loss=%.4f val_acer=%.4f",
                 config.member_id, epoch, stats.train_loss, stats.val_loss, stats.val_acer)
        if on_epoch is not None:
            on_epoch(epoch, stats)
    model.eval()
    return model, record


# -- checkpoints -------------------------------------------------------------------

def flatten_parameters(model: MemberNet) -> bytes:
    parts = [p.detach().to(torch.float32).numpy().astype("<f4").ravel() for p in model.parameters()]
    return np.concatenate(parts).tobytes()


def save_checkpoint(model: MemberNet, config: MemberConfig | None, path) -> Path:
    """Write ``member.json`` and ``weights.bin`` into directory ``path``."""
    config = config or model.config
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = flatten_parameters(model)
    meta = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "parameter_count": len(blob) // 4,
        "digest": "sha256:" + hashlib.sha256(blob).hexdigest(),
    }
    (path / "weights.bin").write_bytes(blob)
    (path / "member.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path, expected_region: RegionKind | str | None = None) -> tuple[MemberNet, MemberConfig]:
    path = Path(path)
    meta_path, weights_path = path / "member.json", path / "weights.bin"
    if not meta_path.is_file() or not weights_path.is_file():
        raise MissingFile(str(path))
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        config = MemberConfig.from_dict(meta["config"])
        count, digest = int(meta["parameter_count"]), meta["digest"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"{meta_path}: {exc}") from None
    blob = weights_path.read_bytes()
    if "sha256:" + hashlib.sha256(blob).hexdigest() != digest or len(blob) != 4 * count:
        raise CorruptCheckpoint(f"{weights_path}: digest or size mismatch")
    if expected_region is not None and config.region is not RegionKind(expected_region):
        raise ConfigMismatch(f"checkpoint region {config.region.value}, slot expects {RegionKind(expected_region).value}")
    model = MemberNet(config)
    flat = np.frombuffer(blob, dtype="<f4")
    if sum(p.numel() for p in model.parameters()) != count:
        raise CorruptCheckpoint(f"{path}: parameter count does not match config")
    offset = 0
    with torch.no_grad():
        for p in model.parameters():
            n = p.numel()
            p.copy_(torch.from_numpy(flat[offset:offset + n].astype(np.float32).reshape(p.shape)))
            offset += n
    model.eval()
    return model, config
