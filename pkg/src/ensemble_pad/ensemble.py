"""Region-specialised members combined into one bonafide/attack decision."""
from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .augment import AugmentationConfig
from .dataset import DatasetManifest, Label, Sample, Split
from .errors import (
    BundleError,
    ConfigMismatch,
    EmptyScores,
    EmptyVideo,
    EvenMajority,
    InvalidConfig,
    MissingFile,
    SingleClassTrainingSet,
    SingleClassValidation,
    UnknownMember,
)
from .frames import (
    DEFAULT_BAND_FRACTION,
    DEFAULT_WEIGHTS,
    FaceBox,
    FaceLocator,
    FrameQualityScore,
    RegionKind,
    VideoFrames,
    extract_region,
    locate_face,
    select_best_frame,
)
from .imaging import load_image
from .metrics import acer, apcer, bpcer, confusion_from_scores, is_bonafide
from .model import (
    MemberConfig,
    MemberNet,
    MemberScore,
    TrainingConfig,
    TrainingRecord,
    fit_member,
    load_checkpoint,
    predict_member,
    predict_proba,
    save_checkpoint,
)

log = logging.getLogger(__name__)

BUNDLE_VERSION = 1
DEFAULT_REGIONS = (RegionKind.FULL_FRAME, RegionKind.FACE, RegionKind.BACKGROUND, RegionKind.FACE_BAND)


class RuleName(str, enum.Enum):
    MEAN_PROBABILITY = "mean_probability"
    MAJORITY_VOTE = "majority_vote"
    ATTACK_VETO = "attack_veto"


@dataclass(frozen=True)
class AggregationRule:
    name: RuleName = RuleName.MEAN_PROBABILITY
    threshold: float = 0.5
    veto_floor: float = 0.05

    def __post_init__(self):
        try:
            object.__setattr__(self, "name", RuleName(self.name))
        except ValueError:
            raise InvalidConfig(f"unknown aggregation rule {self.name!r}") from None
        if not 0.0 < self.threshold < 1.0:
            raise InvalidConfig(f"threshold {self.threshold} outside (0, 1)")
        if not 0.0 < self.veto_floor < 1.0:
            raise InvalidConfig(f"veto_floor {self.veto_floor} outside (0, 1)")

    def with_threshold(self, threshold: float) -> "AggregationRule":
        return AggregationRule(self.name, threshold, self.veto_floor)

    def to_dict(self) -> dict:
        return {"name": self.name.value, "threshold": self.threshold, "veto_floor": self.veto_floor}


@dataclass(frozen=True)
class EnsembleConfig:
    members: tuple[MemberConfig, ...]
    rule: AggregationRule = field(default_factory=AggregationRule)

    def __post_init__(self):
        members = tuple(self.members)
        object.__setattr__(self, "members", members)
        if len(members) < 2:
            raise InvalidConfig("an ensemble needs at least two members")
        ids = [m.member_id for m in members]
        if len(set(ids)) != len(ids):
            raise InvalidConfig(f"duplicate member ids: {ids}")
        regions = [m.region for m in members]
        if len(set(regions)) != len(regions):
            raise InvalidConfig("each member must own a distinct region")
        if self.rule.name is RuleName.MAJORITY_VOTE and len(members) % 2 == 0:
            raise EvenMajority(f"majority_vote needs an odd member count, got {len(members)}")

    def to_dict(self) -> dict:
        return {"members": [m.to_dict() for m in self.members], "rule": self.rule.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleConfig":
        r = d["rule"]
        return cls(tuple(MemberConfig.from_dict(m) for m in d["members"]),
                   AggregationRule(r["name"], r["threshold"], r["veto_floor"]))


@dataclass(frozen=True)
class EnsembleDecision:
    member_scores: tuple[MemberScore, ...]
    aggregate: float
    verdict: Label
    rule_used: AggregationRule

    @property
    def is_bonafide(self) -> bool:
        return self.verdict is Label.BONAFIDE

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "aggregate": self.aggregate,
            "rule": self.rule_used.to_dict(),
            "member_scores": {s.member_id: s.p_bonafide for s in self.member_scores},
        }


def aggregate(scores: Sequence[MemberScore], rule: AggregationRule) -> EnsembleDecision:
    scores = tuple(scores)
    if not scores:
        raise EmptyScores("no member scores to aggregate")
    ps = [s.p_bonafide for s in scores]
    tau = rule.threshold
    if rule.name is RuleName.MAJORITY_VOTE:
        if len(ps) % 2 == 0:
            raise EvenMajority(f"{len(ps)} votes")
        votes = sum(p >= tau for p in ps)
        value = votes / len(ps)
        bonafide = 2 * votes > len(ps)
    else:
        value = math.fsum(ps) / len(ps)
        bonafide = value >= tau
        if rule.name is RuleName.ATTACK_VETO and min(ps) < rule.veto_floor:
            bonafide = False
        value = min(max(value, min(ps)), max(ps))
    return EnsembleDecision(scores, value, Label.BONAFIDE if bonafide else Label.ATTACK, rule)


# -- threshold calibration ----------------------------------------------------------

class CalibrationTarget(str, enum.Enum):
    MIN_ACER = "min_acer"
    MAX_BPCER_AT_APCER = "max_bpcer_at_apcer"


def threshold_candidates(scores: Iterable[float]) -> list[float]:
    """0, 1 and the midpoints between adjacent distinct sorted scores, ascending."""
    s = sorted(set(float(v) for v in scores))
    mids = [(a + b) / 2 for a, b in zip(s, s[1:])]
    return sorted(set([0.0, 1.0] + mids))


def calibrate_threshold(val_scores: Sequence[tuple[float, object]],
                        target: CalibrationTarget | str = CalibrationTarget.MIN_ACER,
                        apcer_limit: float = 0.0) -> float:
    """Pick the decision threshold on validation scores.

    ``min_acer`` minimises ACER. ``max_bpcer_at_apcer`` keeps APCER at or below
    ``apcer_limit`` and minimises BPCER under that cap (if no candidate meets
    the cap, the lowest APCER wins). Ties go to the smallest threshold.
    """
    target = CalibrationTarget(target)
    labels = {is_bonafide(y) for _, y in val_scores}
    if labels != {True, False}:
        raise SingleClassValidation("calibration needs bonafide and attack scores")
    best_key, best_tau = None, None
    for tau in threshold_candidates(p for p, _ in val_scores):
        c = confusion_from_scores(val_scores, tau)
        a, b = apcer(c), bpcer(c)
        if target is CalibrationTarget.MIN_ACER:
            key = (acer(a, b),)
        else:
            key = (max(a - apcer_limit, 0.0), b)
        if best_key is None or key < best_key:
            best_key, best_tau = key, tau
    return best_tau


# -- loaded ensembles -------------------------------------------------------------

@dataclass
class Ensemble:
    config: EnsembleConfig
    members: dict[str, MemberNet]
    band_fraction: float = DEFAULT_BAND_FRACTION
    quality_weights: tuple[float, float, float] = DEFAULT_WEIGHTS

    def __post_init__(self):
        for mc in self.config.members:
            if mc.member_id not in self.members:
                raise BundleError(f"member {mc.member_id} has no loaded model")
            loaded = self.members[mc.member_id].config
            if loaded.region is not mc.region:
                raise ConfigMismatch(f"member {mc.member_id}: loaded region {loaded.region.value}, config {mc.region.value}")

    @property
    def rule(self) -> AggregationRule:
        return self.config.rule

    def member(self, member_id: str) -> MemberNet:
        if member_id not in self.members:
            raise UnknownMember(member_id, self.members)
        return self.members[member_id]

    def score_frame(self, frame: np.ndarray, box: FaceBox) -> list[MemberScore]:
        out = []
        for mc in self.config.members:
            view = extract_region(frame, box, mc.region, mc.backbone.input_resolution, self.band_fraction)
            out.append(predict_member(self.members[mc.member_id], view))
        return out


@dataclass(frozen=True)
class Inference:
    decision: EnsembleDecision
    frame_index: int
    face_box: FaceBox
    quality: FrameQualityScore | None = None

    def to_dict(self) -> dict:
        d = self.decision.to_dict()
        b = self.face_box
        d.update(frame=self.frame_index,
                 face_box=[b.row0, b.col0, b.row1, b.col1, b.confidence],
                 quality=None if self.quality is None else vars(self.quality).copy())
        return d


def infer(frames, ensemble: Ensemble, locator: FaceLocator = locate_face) -> Inference:
    """Frame selection -> face location -> region views -> members -> aggregate.

    ``frames`` is one (H, W, C) image, a sequence of frames or a VideoFrames.
    """
    if isinstance(frames, np.ndarray) and frames.ndim == 3:
        index, quality, frame = 0, None, frames
    else:
        video = frames if isinstance(frames, VideoFrames) else VideoFrames(tuple(frames))
        if len(video) == 1:
            index, quality = 0, None
        else:
            index, quality = select_best_frame(video, locator, ensemble.quality_weights)
        frame = video.frames[index]
    box = locator(frame)
    decision = aggregate(ensemble.score_frame(frame, box), ensemble.rule)
    return Inference(decision, index, box, quality)


# -- bundles -----------------------------------------------------------------------

def save_bundle(ensemble: Ensemble, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    doc = {
        "bundle_version": BUNDLE_VERSION,
        **ensemble.config.to_dict(),
        "band_fraction": ensemble.band_fraction,
        "quality_weights": list(ensemble.quality_weights),
    }
    if extra:
        doc.update(extra)
    for mc in ensemble.config.members:
        save_checkpoint(ensemble.members[mc.member_id], mc, path / mc.member_id)
    (path / "ensemble.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_bundle(path) -> Ensemble:
    path = Path(path)
    doc_path = path / "ensemble.json"
    if not doc_path.is_file():
        raise BundleError(f"no ensemble bundle at {path}")
    try:
        doc = json.loads(doc_path.read_text(encoding="utf-8"))
        config = EnsembleConfig.from_dict(doc)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"{doc_path}: {exc}") from None
    members = {}
    for mc in config.members:
        try:
            model, loaded = load_checkpoint(path / mc.member_id, expected_region=mc.region)
        except MissingFile:
            raise BundleError(f"missing checkpoint for member {mc.member_id}") from None
        if loaded != mc:
            raise ConfigMismatch(f"member {mc.member_id}: checkpoint config differs from ensemble.json")
        members[mc.member_id] = model
    return Ensemble(config, members, doc.get("band_fraction", DEFAULT_BAND_FRACTION),
                    tuple(doc.get("quality_weights", DEFAULT_WEIGHTS)))


# -- training ------------------------------------------------------------------------

def extract_views(images: Sequence[np.ndarray], members: Sequence[MemberConfig],
                  locator: FaceLocator = locate_face,
                  band_fraction: float = DEFAULT_BAND_FRACTION) -> dict[str, np.ndarray]:
    """Region views for every image, stacked per member id (float32)."""
    views = {m.member_id: [] for m in members}
    for img in images:
        box = locator(img)
        for m in members:
            v = extract_region(img, box, m.region, m.backbone.input_resolution, band_fraction)
            views[m.member_id].append(v.pixels.astype(np.float32))
    return {k: np.stack(v) for k, v in views.items()}


def load_split(manifest: DatasetManifest, split: Split | str) -> tuple[list[Sample], list[np.ndarray], np.ndarray]:
    samples = manifest.split(split)
    images = [load_image(manifest.resolve(s)) for s in samples]
    labels = np.array([1.0 if s.is_bonafide else 0.0 for s in samples])
    return samples, images, labels


def member_seed(base: int, index: int) -> int:
    return base + 1009 * index


@dataclass
class TrainedEnsemble:
    ensemble: Ensemble
    records: dict[str, TrainingRecord]
    val_scores: list[tuple[float, bool]]


def train_ensemble(
    manifest: DatasetManifest,
    config: EnsembleConfig,
    tconfig: TrainingConfig,
    augmentation: AugmentationConfig | None = None,
    locator: FaceLocator = locate_face,
    band_fraction: float = DEFAULT_BAND_FRACTION,
    calibration: CalibrationTarget | str | None = CalibrationTarget.MIN_ACER,
    apcer_limit: float = 0.0,
) -> TrainedEnsemble:
    """Train every member on the manifest's train split and, unless
    ``calibration`` is None, set the rule threshold from the val split."""
    _, train_images, y_train = load_split(manifest, Split.TRAIN)
    _, val_images, y_val = load_split(manifest, Split.VAL)
    if len(np.unique(y_train)) < 2:
        raise SingleClassTrainingSet("train split must contain bonafide and attack samples")
    x_train = extract_views(train_images, config.members, locator, band_fraction)
    x_val = extract_views(val_images, config.members, locator, band_fraction) if val_images else None

    members, records = {}, {}
    for i, mc in enumerate(config.members):
        member_tconfig = TrainingConfig(tconfig.learning_rate, tconfig.beta1, tconfig.beta2, tconfig.epsilon,
                                        tconfig.batch_size, tconfig.epochs, member_seed(tconfig.seed, i))
        aug = None
        if augmentation is not None:
            aug = AugmentationConfig(augmentation.flip_probability, augmentation.crop_fraction,
                                     member_seed(augmentation.seed, i))
        model, record = fit_member(mc, member_tconfig, x_train[mc.member_id], y_train,
                                   None if x_val is None else x_val[mc.member_id], y_val, aug)
        members[mc.member_id] = model
        records[mc.member_id] = record

    ensemble = Ensemble(config, members, band_fraction)
    val_scores = []
    if x_val is not None:
        probs = {mid: predict_proba(m, x_val[mid]) for mid, m in members.items()}
        for j in range(len(y_val)):
            scores = [MemberScore(mc.member_id, float(probs[mc.member_id][j])) for mc in config.members]
            val_scores.append((aggregate(scores, config.rule).aggregate, bool(y_val[j])))
    if calibration is not None and val_scores:
        tau = calibrate_threshold(val_scores, calibration, apcer_limit)
        tau = min(max(tau, 1e-6), 1 - 1e-6)
        ensemble.config = EnsembleConfig(config.members, config.rule.with_threshold(tau))
        log.info("calibrated threshold %.6f (%s)", tau, CalibrationTarget(calibration).value)
    return TrainedEnsemble(ensemble, records, val_scores)
