"""Sample records, the attack taxonomy and JSON-Lines manifests."""
from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadFractions,
    DuplicatePath,
    LabelTaxonomyViolation,
    MalformedRecord,
    MissingFile,
    SplitLeakage,
    TooFewSubjects,
)

MANIFEST_VERSION = 1


class AttackType(str, enum.Enum):
    # declaration order is the serialization order
    PRINTED_PHOTO = "printed_photo"
    DIGITAL_PHOTO = "digital_photo"
    REPLAY = "replay"
    CARD_MASK = "card_mask"


class Label(str, enum.Enum):
    BONAFIDE = "bonafide"
    ATTACK = "attack"


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


SPLITS = (Split.TRAIN, Split.VAL, Split.TEST)


@dataclass(frozen=True)
class Sample:
    path: str
    label: Label
    subject_id: str
    scenario_id: str
    split: Split = Split.TRAIN
    attack_type: AttackType | None = None

    def __post_init__(self):
        object.__setattr__(self, "label", Label(self.label))
        object.__setattr__(self, "split", Split(self.split))
        if self.attack_type is not None:
            object.__setattr__(self, "attack_type", AttackType(self.attack_type))
        if not self.path:
            raise ValueError("sample path must be non-empty")
        if (self.attack_type is not None) != (self.label is Label.ATTACK):
            raise LabelTaxonomyViolation(
                f"{self.path}: label={self.label.value} attack_type="
                f"{self.attack_type.value if self.attack_type else None}"
            )

    @property
    def is_bonafide(self) -> bool:
        return self.label is Label.BONAFIDE

    def to_record(self) -> dict:
        rec = {
            "path": self.path,
            "label": self.label.value,
            "subject_id": self.subject_id,
            "scenario_id": self.scenario_id,
            "split": self.split.value,
        }
        if self.attack_type is not None:
            rec["attack_type"] = self.attack_type.value
        return rec


@dataclass(frozen=True)
class DatasetManifest:
    root: str
    samples: tuple[Sample, ...] = ()
    version: int = MANIFEST_VERSION

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        validate_samples(self.samples)

    def __len__(self) -> int:
        return len(self.samples)

    def split(self, which: Split | str) -> list[Sample]:
        which = Split(which)
        return [s for s in self.samples if s.split is which]

    def subjects(self, which: Split | str | None = None) -> set[str]:
        pool = self.samples if which is None else self.split(which)
        return {s.subject_id for s in pool}

    def resolve(self, sample: Sample) -> Path:
        return Path(self.root) / sample.path


def validate_samples(samples: Sequence[Sample]) -> None:
    """Check path uniqueness and subject-disjointness of splits."""
    seen: set[str] = set()
    subject_split: dict[str, Split] = {}
    for s in samples:
        if s.path in seen:
            raise DuplicatePath(s.path)
        seen.add(s.path)
        prev = subject_split.setdefault(s.subject_id, s.split)
        if prev is not s.split:
            raise SplitLeakage(s.subject_id)


_REQUIRED = ("path", "label", "subject_id", "scenario_id", "split")
_ALLOWED = set(_REQUIRED) | {"attack_type"}


def _parse_record(obj, lineno: int) -> Sample:
    if not isinstance(obj, dict):
        raise MalformedRecord(lineno, "record is not an object")
    missing = [k for k in _REQUIRED if k not in obj]
    if missing:
        raise MalformedRecord(lineno, f"missing keys {missing}")
    extra = set(obj) - _ALLOWED
    if extra:
        raise MalformedRecord(lineno, f"unknown keys {sorted(extra)}")
    for k in _ALLOWED & set(obj):
        if not isinstance(obj[k], str):
            raise MalformedRecord(lineno, f"{k} must be a string")
    try:
        label = Label(obj["label"])
        split = Split(obj["split"])
        attack = AttackType(obj["attack_type"]) if "attack_type" in obj else None
    except ValueError as exc:
        raise MalformedRecord(lineno, str(exc)) from None
    if not obj["path"]:
        raise MalformedRecord(lineno, "empty path")
    if (attack is not None) != (label is Label.ATTACK):
        raise LabelTaxonomyViolation(f"line {lineno}: label={label.value} attack_type={obj.get('attack_type')}")
    return Sample(obj["path"], label, obj["subject_id"], obj["scenario_id"], split, attack)


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Read a manifest; ``root`` is resolved relative to the manifest's directory.

    With ``check_files`` every sample path must stay inside the root and exist.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MalformedRecord(1, "empty manifest")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise MalformedRecord(1, f"bad header: {exc.msg}") from None
    if not isinstance(header, dict) or set(header) != {"version", "root"}:
        raise MalformedRecord(1, "header must hold exactly version and root")
    if header["version"] != MANIFEST_VERSION:
        raise MalformedRecord(1, f"unsupported version {header['version']!r}")
    root = Path(header["root"])
    if not root.is_absolute():
        root = (path.parent / root).resolve()

    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(lineno, exc.msg) from None
        sample = _parse_record(obj, lineno)
        if check_files:
            full = (root / sample.path).resolve()
            if os.path.commonpath([full, root]) != str(root):
                raise MalformedRecord(lineno, f"path escapes root: {sample.path}")
            if not full.is_file():
                raise MissingFile(str(full))
        samples.append(sample)
    return DatasetManifest(str(root), samples, header["version"])


def save_manifest(manifest: DatasetManifest, path, root: str | None = None) -> None:
    """Write ``manifest`` as JSON Lines. ``root`` overrides the stored root string."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"version": manifest.version, "root": manifest.root if root is None else root}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for s in manifest.samples:
            fh.write(json.dumps(s.to_record()) + "\n")


def _split_counts(n: int, fractions: Sequence[float]) -> list[int]:
    raw = [f * n for f in fractions]
    counts = [math.floor(r + 1e-9) for r in raw]
    # largest remainder, ties in train/val/test order
    order = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    for i in range(3):
        if fractions[i] > 0 and counts[i] == 0:
            donor = max(range(3), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_by_subject(
    samples: Iterable[Sample],
    fractions: Sequence[float],
    seed: int,
    root: str = ".",
) -> DatasetManifest:
    """Assign whole subjects to train/val/test.

    Subjects are sorted, shuffled with ``numpy.random.default_rng(seed)`` and
    cut into consecutive prefixes sized by ``fractions``. Every split with a
    nonzero fraction receives at least one subject.
    """
    samples = list(samples)
    fractions = [float(f) for f in fractions]
    if len(fractions) != 3 or any(f < 0 or not math.isfinite(f) for f in fractions):
        raise BadFractions(f"need three nonnegative fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions sum to {sum(fractions)!r}, not 1")
    subjects = sorted({s.subject_id for s in samples})
    needed = sum(f > 0 for f in fractions)
    if len(subjects) < needed:
        raise TooFewSubjects(f"{len(subjects)} subjects for {needed} nonempty splits")

    perm = np.random.default_rng(seed).permutation(len(subjects))
    counts = _split_counts(len(subjects), fractions)
    assignment: dict[str, Split] = {}
    start = 0
    for split, count in zip(SPLITS, counts):
        for idx in perm[start:start + count]:
            assignment[subjects[idx]] = split
        start += count
    out = [replace(s, split=assignment[s.subject_id]) for s in samples]
    return DatasetManifest(root, out)
