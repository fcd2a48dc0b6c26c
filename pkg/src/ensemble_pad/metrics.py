"""PAD error rates and score curves.

Positive class is **bonafide**:

    TP  bonafide accepted      FN  bonafide rejected
    TN  attack rejected        FP  attack accepted

so APCER = FP / (TN + FP) is measured over the attack population and
BPCER = FN / (TP + FN) over the bonafide population. A sample is predicted
bonafide when its score is >= the threshold.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .dataset import Label
from .errors import EmptyScores, NoAttackSamples, NoBonafideSamples, SingleClassScores


def is_bonafide(label) -> bool:
    """Accept Label, "bonafide"/"attack", bool or 1/0 (1 = bonafide)."""
    if isinstance(label, Label):
        return label is Label.BONAFIDE
    if isinstance(label, str):
        return Label(label) is Label.BONAFIDE
    return bool(label)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a nonnegative integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @property
    def n_bonafide(self) -> int:
        return self.tp + self.fn

    @property
    def n_attack(self) -> int:
        return self.tn + self.fp

    def to_dict(self) -> dict:
        return asdict(self)


def confusion_from_scores(pairs: Iterable[tuple[float, object]], threshold: float) -> ConfusionCounts:
    tp = fp = tn = fn = 0
    n = 0
    for p, label in pairs:
        n += 1
        accepted = p >= threshold
        if is_bonafide(label):
            tp += accepted
            fn += not accepted
        else:
            fp += accepted
            tn += not accepted
    if n == 0:
        raise EmptyScores("no scores")
    return ConfusionCounts(tp, fp, tn, fn)


def apcer(c: ConfusionCounts) -> float:
    if c.n_attack == 0:
        raise NoAttackSamples("APCER undefined without attack samples")
    return c.fp / (c.tn + c.fp)


def bpcer(c: ConfusionCounts) -> float:
    if c.n_bonafide == 0:
        raise NoBonafideSamples("BPCER undefined without bonafide samples")
    return c.fn / (c.tp + c.fn)


def acer(apcer_value: float, bpcer_value: float) -> float:
    return (apcer_value + bpcer_value) / 2


def format_percent(value: float, decimals: int = 2) -> str:
    """Truncating percent display, e.g. 0.026775 -> '2.67%'."""
    scaled = Fraction(value).limit_denominator(10**12) * 100 * 10**decimals
    whole = int(scaled)  # floor for nonnegative values
    return f"{whole / 10**decimals:.{decimals}f}%"


@dataclass(frozen=True)
class MetricsReport:
    apcer: float
    bpcer: float
    acer: float
    counts: ConfusionCounts
    threshold: float

    @classmethod
    def from_counts(cls, counts: ConfusionCounts, threshold: float) -> "MetricsReport":
        a, b = apcer(counts), bpcer(counts)
        return cls(a, b, acer(a, b), counts, threshold)

    def to_dict(self) -> dict:
        return {"apcer": self.apcer, "bpcer": self.bpcer, "acer": self.acer,
                "counts": self.counts.to_dict(), "threshold": self.threshold}


def evaluate_scores(pairs: Sequence[tuple[float, object]], threshold: float) -> MetricsReport:
    return MetricsReport.from_counts(confusion_from_scores(pairs, threshold), threshold)


# -- curves --------------------------------------------------------------------

@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    x: float
    y: float

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "x": self.x, "y": self.y}


def sweep_thresholds(scores: Sequence[float]) -> list[float]:
    """Distinct scores plus a sentinel above the max and below the min, descending."""
    distinct = sorted(set(float(s) for s in scores), reverse=True)
    return [distinct[0] + 1.0] + distinct + [distinct[-1] - 1.0]


def _split(pairs):
    pairs = [(float(p), is_bonafide(y)) for p, y in pairs]
    if not pairs:
        raise EmptyScores("no scores")
    return pairs


def roc_curve(pairs: Iterable[tuple[float, object]]) -> list[CurvePoint]:
    """ROC points (x = FP rate, y = TP rate) sorted by x then y.

    One point per swept threshold; a threshold reproducing an earlier
    (higher-threshold) point is dropped.
    """
    pairs = _split(pairs)
    n_bona = sum(b for _, b in pairs)
    n_att = len(pairs) - n_bona
    if n_bona == 0 or n_att == 0:
        raise SingleClassScores("ROC needs both bonafide and attack scores")
    points: dict[tuple[float, float], CurvePoint] = {}
    for t in sweep_thresholds([p for p, _ in pairs]):
        c = confusion_from_scores(pairs, t)
        xy = (c.fp / n_att, c.tp / n_bona)
        points.setdefault(xy, CurvePoint(t, *xy))
    return sorted(points.values(), key=lambda pt: (pt.x, pt.y))


def pr_curve(pairs: Iterable[tuple[float, object]]) -> list[CurvePoint]:
    """Precision-recall points (x = recall, y = precision) in descending-threshold
    order. Precision with no predicted positives is 1."""
    pairs = _split(pairs)
    n_bona = sum(b for _, b in pairs)
    if n_bona == 0:
        raise SingleClassScores("PR curve needs at least one bonafide score")
    out = []
    for t in sweep_thresholds([p for p, _ in pairs]):
        c = confusion_from_scores(pairs, t)
        predicted = c.tp + c.fp
        precision = c.tp / predicted if predicted else 1.0
        out.append(CurvePoint(t, c.tp / n_bona, precision))
    return out


def auc(points: Iterable[CurvePoint]) -> float:
    """Trapezoidal area under points sorted by (x, y), summed exactly."""
    pts = sorted(points, key=lambda pt: (pt.x, pt.y))
    area = Fraction(0)
    for a, b in zip(pts, pts[1:]):
        area += (Fraction(b.x) - Fraction(a.x)) * (Fraction(a.y) + Fraction(b.y)) / 2
    return float(area)
