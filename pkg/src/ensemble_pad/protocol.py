"""Scenario test protocols: subjects x scenarios x cases."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import AttackType, DatasetManifest, Label, Sample, Split, save_manifest
from .errors import EmptyProtocol, InvalidConfig, MissingFile, UnresolvedProtocolRows
from .imaging import save_image
from .synthetic import SubjectStyle, random_attack_config, render_bonafide, synthesize_attack

BUILTIN = {"table1": "table1_protocol.json"}


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    label: Label
    case_count: int
    attack_type: AttackType | None = None
    lighting: str = "natural"
    accessory: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "label", Label(self.label))
        if self.attack_type is not None:
            object.__setattr__(self, "attack_type", AttackType(self.attack_type))
        if self.case_count < 1:
            raise InvalidConfig(f"scenario {self.scenario_id}: case_count must be positive")


@dataclass(frozen=True)
class EvaluationProtocol:
    scenarios: tuple[Scenario, ...]
    subjects: tuple[str, ...]
    name: str = ""

    @property
    def total_cases(self) -> int:
        return len(self.subjects) * sum(s.case_count for s in self.scenarios)

    def scenario(self, scenario_id: str) -> Scenario:
        for s in self.scenarios:
            if s.scenario_id == scenario_id:
                return s
        raise KeyError(scenario_id)


@dataclass(frozen=True)
class ProtocolRow:
    subject_id: str
    scenario_id: str
    label: Label
    case_index: int


def load_protocol(source: str | Path = "table1") -> EvaluationProtocol:
    """Load a protocol JSON file, or a bundled one by name (``"table1"``)."""
    if str(source) in BUILTIN:
        text = resources.files("ensemble_pad.resources").joinpath(BUILTIN[str(source)]).read_text(encoding="utf-8")
    else:
        path = Path(source)
        if not path.is_file():
            raise MissingFile(str(path))
        text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
        scenarios = tuple(
            Scenario(s["scenario_id"], s["label"], int(s["case_count"]), s.get("attack_type"),
                     s.get("lighting", "natural"), s.get("accessory"))
            for s in doc["scenarios"]
        )
        return EvaluationProtocol(scenarios, tuple(doc["subjects"]), doc.get("name", ""))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig(f"bad protocol {source}: {exc}") from None


def protocol_expand(protocol: EvaluationProtocol) -> list[ProtocolRow]:
    if not protocol.subjects or not protocol.scenarios:
        raise EmptyProtocol("protocol needs at least one subject and one scenario")
    return [
        ProtocolRow(subject, sc.scenario_id, sc.label, k)
        for subject in protocol.subjects
        for sc in protocol.scenarios
        for k in range(sc.case_count)
    ]


def resolve_rows(protocol: EvaluationProtocol, manifest: DatasetManifest) -> list[tuple[ProtocolRow, Sample]]:
    """Bind every protocol row to a manifest sample of the same subject and
    scenario (in manifest order). Raises with the full list of shortfalls."""
    pool: dict[tuple[str, str], list[Sample]] = {}
    for s in manifest.samples:
        pool.setdefault((s.subject_id, s.scenario_id), []).append(s)
    bound, missing = [], []
    for subject in protocol.subjects:
        for sc in protocol.scenarios:
            found = [c for c in pool.get((subject, sc.scenario_id), []) if c.label is sc.label]
            if len(found) < sc.case_count:
                missing.append((subject, sc.scenario_id, sc.case_count, len(found)))
                continue
            for k in range(sc.case_count):
                bound.append((ProtocolRow(subject, sc.scenario_id, sc.label, k), found[k]))
    if missing:
        raise UnresolvedProtocolRows(missing)
    if not bound:
        raise EmptyProtocol("protocol expands to no rows")
    return bound


def generate_protocol_dataset(root, protocol: EvaluationProtocol, seed: int = 0,
                              size: tuple[int, int] = (128, 128)) -> DatasetManifest:
    """Render one synthetic image per protocol row under ``root`` (all test split)."""
    root = Path(root)
    master = np.random.default_rng(seed)
    samples = []
    for subject in protocol.subjects:
        rng = np.random.default_rng(master.integers(0, 2**63))
        style = SubjectStyle.draw(rng)
        for sc in protocol.scenarios:
            for k in range(sc.case_count):
                img = render_bonafide(style, rng, size, sc.lighting, sc.accessory)
                rel = f"{subject}/{sc.scenario_id}_{k}.png"
                if sc.label is Label.BONAFIDE:
                    sample = Sample(rel, Label.BONAFIDE, subject, sc.scenario_id, Split.TEST)
                else:
                    cfg = random_attack_config(sc.attack_type, rng)
                    img, sample = synthesize_attack(img, cfg, path=rel, subject_id=subject,
                                                    scenario_id=sc.scenario_id, split=Split.TEST)
                save_image(img, root / rel)
                samples.append(sample)
    manifest = DatasetManifest(str(root.resolve()), samples)
    save_manifest(manifest, root / "manifest.jsonl", root=".")
    return manifest
