"""Run configuration: one flat YAML mapping.

Keys (defaults in brackets):

    manifest            dataset manifest path (train/evaluate)       [none]
    out_dir             output directory                             [runs/default]
    seed                base seed for init, shuffling, augmentation  [0]
    regions             member regions, one member each              [full_frame, face, background, face_band]
    input_size          member input [height, width]                 [128, 128]
    conv_blocks         list of [channels, kernel, stride]           [[16,3,2],[32,3,2],[64,3,2]]
    dense_units         dense head width                             [64]
    dropout_rate        dense head dropout                           [0.5]
    band_fraction       face_band dilation per side                  [0.25]
    learning_rate       Adam step size                               [0.001]
    beta1, beta2        Adam moment decay                            [0.9, 0.999]
    epsilon             Adam denominator guard                       [1.0e-8]
    batch_size          mini-batch size                              [16]
    epochs              training epochs per member                   [12]
    augment             enable flip/crop augmentation                [true]
    flip_probability    horizontal flip probability                  [0.5]
    crop_fraction       crop side / input side                       [0.9]
    rule                mean_probability | majority_vote | attack_veto [mean_probability]
    threshold           fixed decision threshold; null = calibrate    [null]
    calibration         min_acer | max_bpcer_at_apcer                [min_acer]
    apcer_limit         APCER cap for max_bpcer_at_apcer             [0.0]
    veto_floor          attack_veto floor                            [0.05]
    locator             face locator (only "center" is built in)     [center]
    quality_weights     sharpness, exposure, face presence weights   [0.5, 0.25, 0.25]
    protocol            protocol file or bundled name for evaluate   [null]

Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .augment import AugmentationConfig
from .ensemble import DEFAULT_REGIONS, AggregationRule, CalibrationTarget, EnsembleConfig, RuleName
from .errors import InvalidConfig, MissingFile
from .frames import RegionKind, locate_face
from .model import BackboneConfig, MemberConfig, TrainingConfig


@dataclass(frozen=True)
class RunConfig:
    manifest: str | None = None
    out_dir: str = "runs/default"
    seed: int = 0
    regions: tuple = tuple(r.value for r in DEFAULT_REGIONS)
    input_size: tuple = (128, 128)
    conv_blocks: tuple = ((16, 3, 2), (32, 3, 2), (64, 3, 2))
    dense_units: int = 64
    dropout_rate: float = 0.5
    band_fraction: float = 0.25
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 16
    epochs: int = 12
    augment: bool = True
    flip_probability: float = 0.5
    crop_fraction: float = 0.9
    rule: str = "mean_probability"
    threshold: float | None = None
    calibration: str = "min_acer"
    apcer_limit: float = 0.0
    veto_floor: float = 0.05
    locator: str = "center"
    quality_weights: tuple = (0.5, 0.25, 0.25)
    protocol: str | None = None

    def __post_init__(self):
        for name in ("regions", "input_size", "quality_weights"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "conv_blocks", tuple(tuple(b) for b in self.conv_blocks))
        if not isinstance(self.seed, int) or self.seed < 0:
            raise InvalidConfig("seed must be an unsigned integer")
        if self.locator != "center":
            raise InvalidConfig(f"unknown locator {self.locator!r}; built in: center")
        try:
            CalibrationTarget(self.calibration)
            RuleName(self.rule)
            [RegionKind(r) for r in self.regions]
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from None
        # build once so bad values fail at load time
        self.backbone().feature_shape()
        self.ensemble_config()
        self.training_config()
        self.augmentation_config()

    # -- derived configs -----------------------------------------------------------

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(tuple(self.input_size), self.conv_blocks, self.dense_units, self.dropout_rate)

    def ensemble_config(self) -> EnsembleConfig:
        bb = self.backbone()
        members = tuple(MemberConfig(RegionKind(r), bb, RegionKind(r).value) for r in self.regions)
        rule = AggregationRule(self.rule, 0.5 if self.threshold is None else self.threshold, self.veto_floor)
        return EnsembleConfig(members, rule)

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(self.learning_rate, self.beta1, self.beta2, self.epsilon,
                              self.batch_size, self.epochs, self.seed)

    def augmentation_config(self) -> AugmentationConfig | None:
        if not self.augment:
            return None
        return AugmentationConfig(self.flip_probability, self.crop_fraction, self.seed + 1)

    def locator_fn(self):
        return locate_face

    def to_dict(self) -> dict:
        d = asdict(self)
        return json.loads(json.dumps(d))

    def digest(self) -> str:
        """Content hash of the run settings; the output location is left out so
        identical runs written to different directories share a digest."""
        d = self.to_dict()
        d.pop("out_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return "sha256:" + hashlib.sha256(blob).hexdigest()


KEYS = {f.name for f in fields(RunConfig)}
PATH_KEYS = ("manifest", "out_dir", "protocol")


def parse_run_config(mapping: dict | None, base_dir: str | Path = ".") -> RunConfig:
    mapping = dict(mapping or {})
    unknown = sorted(set(mapping) - KEYS)
    if unknown:
        raise InvalidConfig(f"unknown config keys: {', '.join(unknown)}")
    base = Path(base_dir)
    for key in PATH_KEYS:
        v = mapping.get(key)
        if isinstance(v, str) and not (key == "protocol" and v == "table1") and not Path(v).is_absolute():
            mapping[key] = str(base / v)
    try:
        return RunConfig(**mapping)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidConfig):
            raise
        raise InvalidConfig(str(exc)) from None


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        mapping = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise InvalidConfig(f"{path}: {exc}") from None
    if mapping is not None and not isinstance(mapping, dict):
        raise InvalidConfig(f"{path}: top level must be a mapping")
    return parse_run_config(mapping, path.parent)


def dump_run_config(config: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True), encoding="utf-8")


def with_overrides(config: RunConfig, **overrides) -> RunConfig:
    clean = {k: v for k, v in overrides.items() if v is not None}
    return replace(config, **clean) if clean else config
