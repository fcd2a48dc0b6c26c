"""Shared fixtures: synthetic datasets and trained runs reused across modules."""
import json
import time

import pytest
import yaml

from ensemble_pad.cli import main
from ensemble_pad.synthetic import generate_desk_dataset

# Desk-scale run used by the end-to-end checks. The learning rate is above the
# library default so the default backbone converges within the time budget.
DESK_CONFIG = {
    "epochs": 25,
    "learning_rate": 3.0e-3,
    "seed": 0,
}
DESK_DATASET = {"n_subjects": 30, "images_per_subject": 6, "size": (128, 128), "seed": 0}

# Small run for determinism and CLI plumbing.
TINY_CONFIG = {
    "epochs": 2,
    "seed": 3,
    "input_size": [48, 48],
    "conv_blocks": [[4, 3, 2], [8, 3, 2]],
    "dense_units": 8,
    "batch_size": 8,
}
TINY_DATASET = {"n_subjects": 6, "images_per_subject": 2, "size": (48, 48), "seed": 1}


def write_config(path, manifest, **extra):
    cfg = {"manifest": str(manifest), **extra}
    path.write_text(yaml.safe_dump(cfg, sort_keys=True), encoding="utf-8")
    return path


def train_and_evaluate(workdir, manifest, config, out_name="run", timings=None):
    cfg_path = write_config(workdir / f"{out_name}.yaml", manifest, **config)
    out = workdir / out_name
    start = time.perf_counter()
    assert main(["train", "--config", str(cfg_path), "--out", str(out), "--quiet"]) == 0
    assert main(["evaluate", "--config", str(cfg_path), "--out", str(out), "--quiet"]) == 0
    if timings is not None:
        timings["train_and_evaluate"] = time.perf_counter() - start
    return out


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    manifest = generate_desk_dataset(root, **DESK_DATASET)
    return root, manifest


@pytest.fixture(scope="session")
def desk_run(desk_dataset, tmp_path_factory):
    root, _ = desk_dataset
    work = tmp_path_factory.mktemp("desk_run")
    timings = {}
    out = train_and_evaluate(work, root / "manifest.jsonl", DESK_CONFIG, timings=timings)
    report = json.loads((out / "report" / "report.json").read_text())
    return out, report, timings["train_and_evaluate"]


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    manifest = generate_desk_dataset(root, fractions=(0.5, 0.25, 0.25), **TINY_DATASET)
    return root, manifest


@pytest.fixture(scope="session")
def tiny_run(tiny_dataset, tmp_path_factory):
    root, _ = tiny_dataset
    work = tmp_path_factory.mktemp("tiny_run")
    return train_and_evaluate(work, root / "manifest.jsonl", TINY_CONFIG)


# -- acceptance summary -------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
