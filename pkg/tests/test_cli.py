import json

import numpy as np
import pytest
from scipy import ndimage

from conftest import TINY_CONFIG, write_config
from ensemble_pad.cli import main
from ensemble_pad.dataset import AttackType, Label, Sample, Split, load_manifest, save_manifest, DatasetManifest
from ensemble_pad.imaging import load_image, save_frames, save_image
from ensemble_pad.report import read_scores
from ensemble_pad.synthetic import SubjectStyle, SyntheticAttackConfig, render_bonafide, synthesize_attack


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def test_train_missing_manifest(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", tmp_path / "nope.jsonl")
    assert main(["train", "--config", str(cfg), "--quiet"]) == 2
    err = last_error(capsys)
    assert err["error"] == "MissingFile" and err["exit_code"] == 2


def test_train_single_class(tmp_path, capsys):
    rng = np.random.default_rng(0)
    samples = []
    for i in range(3):
        rel = f"b{i}.png"
        save_image(render_bonafide(SubjectStyle.draw(rng), rng, (32, 32)), tmp_path / rel)
        samples.append(Sample(rel, Label.BONAFIDE, f"s{i}", "live", Split.TRAIN))
    save_image(np.zeros((32, 32, 3)), tmp_path / "a.png")
    samples.append(Sample("a.png", Label.ATTACK, "s9", "print", Split.TEST, AttackType.PRINTED_PHOTO))
    save_manifest(DatasetManifest(str(tmp_path), samples), tmp_path / "m.jsonl", root=".")
    cfg = write_config(tmp_path / "c.yaml", tmp_path / "m.jsonl", **{**TINY_CONFIG, "input_size": [32, 32]})
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == 4
    assert last_error(capsys)["error"] == "SingleClassTrainingSet"


def test_unknown_config_key(tmp_path, capsys):
    (tmp_path / "c.yaml").write_text("colour: red\n")
    assert main(["train", "--config", str(tmp_path / "c.yaml")]) == 3


def test_tiny_run_outputs(tiny_run):
    for rel in ("bundle/ensemble.json", "config.yaml", "train_summary.json", "training/face.json",
                "report/report.json", "report/roc.png", "report/pr.png", "report/scenarios.tsv",
                "report/scores.jsonl"):
        assert (tiny_run / rel).is_file(), rel
    record = json.loads((tiny_run / "training" / "face.json").read_text())
    assert len(record) == TINY_CONFIG["epochs"]
    doc = json.loads((tiny_run / "report" / "report.json").read_text())
    m = doc["metrics"]
    assert m["acer"] == (m["apcer"] + m["bpcer"]) / 2


def test_report_command_reproduces_metrics(tiny_run, tmp_path):
    doc = json.loads((tiny_run / "report" / "report.json").read_text())
    code = main(["report", "--scores", str(tiny_run / "report" / "scores.jsonl"),
                 "--threshold", repr(doc["metrics"]["threshold"]), "--out", str(tmp_path), "--quiet"])
    assert code == 0
    again = json.loads((tmp_path / "report" / "report.json").read_text())
    assert again["metrics"] == doc["metrics"] and again["curves"] == doc["curves"]


def test_infer_exit_codes(tiny_run, tiny_dataset, tmp_path, capsys):
    root, manifest = tiny_dataset
    sample = manifest.split(Split.TEST)[0]
    bundle = str(tiny_run / "bundle")
    code = main(["infer", str(root / sample.path), "--bundle", bundle, "--json", str(tmp_path / "d.json")])
    line = capsys.readouterr().out.strip().splitlines()[-1]
    verdict = json.loads((tmp_path / "d.json").read_text())["verdict"]
    assert line.startswith(f"verdict={verdict} aggregate=") and line.endswith("frame=0")
    assert code == (0 if verdict == "bonafide" else 10)
    # matches the score recorded by evaluate
    scores = {r["sample_path"]: r for r in read_scores(tiny_run / "report" / "scores.jsonl")}
    assert scores[sample.path]["verdict"] == verdict

    assert main(["infer", str(tmp_path / "missing.png"), "--bundle", bundle]) == 12
    (tmp_path / "junk.png").write_bytes(b"not an image")
    assert main(["infer", str(tmp_path / "junk.png"), "--bundle", bundle]) == 12
    assert main(["infer", str(root / sample.path), "--bundle", str(tmp_path)]) == 11


def test_explain(tiny_run, tiny_dataset, tmp_path, capsys):
    root, manifest = tiny_dataset
    image = str(root / manifest.split(Split.TEST)[0].path)
    bundle = str(tiny_run / "bundle")
    for name in ("a", "b"):
        assert main(["explain", image, "--bundle", bundle, "--member", "face", "--out", str(tmp_path / name),
                     "--quiet"]) == 0
    files = sorted(p.name for p in (tmp_path / "a" / "explain").iterdir())
    assert len(files) == 3
    for f in files:
        assert (tmp_path / "a" / "explain" / f).read_bytes() == (tmp_path / "b" / "explain" / f).read_bytes()
    side = json.loads(next((tmp_path / "a" / "explain").glob("*.json")).read_text())
    assert side["member_id"] == "face" and side["target"] == "attack_score" and side["raw_max"] >= 0
    heat = load_image(next((tmp_path / "a" / "explain").glob("*_map.png")))
    assert heat.min() >= 0 and heat.max() <= 1

    capsys.readouterr()
    assert main(["explain", image, "--bundle", bundle, "--member", "nose", "--out", str(tmp_path)]) == 7
    err = last_error(capsys)
    assert err["error"] == "UnknownMember" and "face_band" in err["message"]


def test_select_frame(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["select-frame", str(tmp_path / "empty")]) == 12
    assert main(["select-frame", str(tmp_path / "nowhere")]) == 12
    rng = np.random.default_rng(2)
    sharp = render_bonafide(SubjectStyle.draw(rng), rng, (64, 64))
    soft = ndimage.gaussian_filter(sharp, sigma=(1.5, 1.5, 0))
    save_frames([soft, soft, sharp, soft], tmp_path / "video")
    capsys.readouterr()
    assert main(["select-frame", str(tmp_path / "video")]) == 0
    out = capsys.readouterr().out.strip()
    assert out.startswith("frame=2 ")
    for key in ("sharpness=", "exposure=", "face_presence=", "total="):
        assert key in out


def test_protocol_evaluation(tiny_run, tmp_path, capsys):
    data = tmp_path / "proto"
    assert main(["synth", "--protocol", "table1", "--size", "48", "--out", str(data), "--seed", "4", "--quiet"]) == 0
    cfg = write_config(tmp_path / "c.yaml", data / "manifest.jsonl", **TINY_CONFIG, protocol="table1")
    code = main(["evaluate", "--config", str(cfg), "--bundle", str(tiny_run / "bundle"),
                 "--out", str(tmp_path / "eval"), "--quiet"])
    assert code == 0
    doc = json.loads((tmp_path / "eval" / "report" / "report.json").read_text())
    assert doc["n_samples"] == 228
    c = doc["metrics"]["counts"]
    assert c["tp"] + c["fn"] == 84 and c["tn"] + c["fp"] == 144
    totals = {k: sum(r["counts"][k] for r in doc["per_scenario"]) for k in c}
    assert totals == c


def test_protocol_unresolved(tiny_run, tiny_dataset, tmp_path, capsys):
    root, _ = tiny_dataset
    code = main(["evaluate", "--bundle", str(tiny_run / "bundle"), "--manifest", str(root / "manifest.jsonl"),
                 "--protocol", "table1", "--out", str(tmp_path), "--quiet"])
    assert code == 8
    err = last_error(capsys)
    assert err["error"] == "UnresolvedProtocolRows" and "150 unresolved rows" in err["message"]


def test_synth_desk(tmp_path):
    assert main(["synth", "--subjects", "3", "--per-subject", "2", "--size", "24", "--out", str(tmp_path),
                 "--quiet"]) == 0
    assert len(load_manifest(tmp_path / "manifest.jsonl")) == 12


@pytest.mark.slow
def test_desk_ensemble_verdicts(desk_run, desk_dataset, tmp_path):
    out = desk_run[0]
    root, manifest = desk_dataset
    bundle = str(out / "bundle")
    bona = next(s for s in manifest.split(Split.TEST) if s.is_bonafide)
    assert main(["infer", str(root / bona.path), "--bundle", bundle, "--quiet"]) == 0
    rng = np.random.default_rng(2024)
    source = render_bonafide(SubjectStyle.draw(rng), rng, (128, 128))
    replay, _ = synthesize_attack(source, SyntheticAttackConfig(AttackType.REPLAY, seed=5))
    save_image(replay, tmp_path / "replay.png")
    assert main(["infer", str(tmp_path / "replay.png"), "--bundle", bundle, "--quiet"]) == 10
