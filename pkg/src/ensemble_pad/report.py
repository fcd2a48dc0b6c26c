"""Score files, report documents and ROC / PR plots."""
from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import EmptyScores, MissingFile, SingleClassScores  # noqa: E402
from .metrics import (  # noqa: E402
    ConfusionCounts,
    apcer,
    auc,
    bpcer,
    confusion_from_scores,
    evaluate_scores,
    format_percent,
    is_bonafide,
    pr_curve,
    roc_curve,
)

REPORT_VERSION = 1


# -- score files ---------------------------------------------------------------------

def write_scores(records: Sequence[dict], path) -> None:
    """JSON Lines of {sample_path, p_aggregate, label, member_scores, ...}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_scores(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# -- report ------------------------------------------------------------------------------

def per_scenario(records: Sequence[dict], threshold: float) -> list[dict]:
    groups: dict[str, list[dict]] = {}
    for r in records:
        groups.setdefault(r.get("scenario_id") or "unspecified", []).append(r)
    rows = []
    for scenario in sorted(groups):
        rs = groups[scenario]
        c = confusion_from_scores([(r["p_aggregate"], r["label"]) for r in rs], threshold)
        row = {"scenario_id": scenario, "n": len(rs), "counts": c.to_dict()}
        row["apcer"] = apcer(c) if c.n_attack else None
        row["bpcer"] = bpcer(c) if c.n_bonafide else None
        rows.append(row)
    return rows


def build_report(records: Sequence[dict], threshold: float, rule: dict | None = None,
                 provenance: dict | None = None) -> dict:
    if not records:
        raise EmptyScores("no scored samples")
    pairs = [(r["p_aggregate"], r["label"]) for r in records]
    if len({is_bonafide(y) for _, y in pairs}) < 2:
        raise SingleClassScores("evaluation needs bonafide and attack samples")
    metrics = evaluate_scores(pairs, threshold)
    roc = roc_curve(pairs)
    pr = pr_curve(pairs)
    scenarios = per_scenario(records, threshold)
    total = ConfusionCounts()
    for row in scenarios:
        total = total + ConfusionCounts(**row["counts"])
    assert total == metrics.counts, "per-scenario counts must sum to the global counts"
    doc = {
        "report_version": REPORT_VERSION,
        "n_samples": len(records),
        "metrics": metrics.to_dict(),
        "display": {k: format_percent(getattr(metrics, k)) for k in ("apcer", "bpcer", "acer")},
        "auc": {"roc": auc(roc), "pr": auc(pr)},
        "curves": {"roc": [p.to_dict() for p in roc], "pr": [p.to_dict() for p in pr]},
        "per_scenario": scenarios,
        "rule": rule,
        "provenance": dict(provenance or {}),
    }
    doc["provenance"].setdefault("created_at", datetime.now(timezone.utc).isoformat(timespec="seconds"))
    return doc


def without_provenance(doc: dict) -> dict:
    return {k: v for k, v in doc.items() if k != "provenance"}


def _plot(points: Sequence[dict], xlabel: str, ylabel: str, title: str, path: Path, diagonal: bool) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4.5), dpi=100)
    xs = [p["x"] for p in points]
    ys = [p["y"] for p in points]
    ax.plot(xs, ys, drawstyle="default", color="tab:red", lw=1.8)
    if diagonal:
        ax.plot([0, 1], [0, 1], ls="--", color="grey", lw=0.8)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def write_report(doc: dict, out_dir) -> dict:
    """Write report.json, roc.png, pr.png and scenarios.tsv into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in ("report.json", "roc.png", "pr.png", "scenarios.tsv")}
    paths["report.json"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _plot(doc["curves"]["roc"], "false positive rate (APCER)", "true positive rate (1 - BPCER)",
          f"ROC  AUC={doc['auc']['roc']:.4f}", paths["roc.png"], diagonal=True)
    _plot(doc["curves"]["pr"], "recall", "precision",
          f"Precision-recall  AUC={doc['auc']['pr']:.4f}", paths["pr.png"], diagonal=False)
    lines = ["scenario_id\tn\ttp\tfp\ttn\tfn\tapcer\tbpcer"]
    for row in doc["per_scenario"]:
        c = row["counts"]
        fmt = lambda v: "" if v is None else f"{v:.6f}"  # noqa: E731
        lines.append(f"{row['scenario_id']}\t{row['n']}\t{c['tp']}\t{c['fp']}\t{c['tn']}\t{c['fn']}"
                     f"\t{fmt(row['apcer'])}\t{fmt(row['bpcer'])}")
    paths["scenarios.tsv"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {k: str(v) for k, v in paths.items()}


def summary_line(doc: dict) -> str:
    m, d = doc["metrics"], doc["display"]
    return (f"APCER={d['apcer']} BPCER={d['bpcer']} ACER={d['acer']} "
            f"AUC={doc['auc']['roc']:.4f} threshold={m['threshold']:.6f} n={doc['n_samples']}")
