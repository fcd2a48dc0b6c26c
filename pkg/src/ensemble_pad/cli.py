"""Command-line interface.

Exit codes for ``train``, ``evaluate``, ``explain``, ``report`` and ``synth``:

    0  success
    1  unexpected internal error
    2  MissingFile (config, manifest, image, score file)
    3  InvalidConfig (unknown key, bad value, unknown locator, ...)
    4  SingleClassTrainingSet
    5  manifest errors (MalformedRecord, LabelTaxonomyViolation, DuplicatePath,
       SplitLeakage, TooFewSubjects, BadFractions)
    6  NonFiniteLoss
    7  bundle errors (missing bundle, CorruptCheckpoint, ConfigMismatch, unknown member)
    8  protocol errors (EmptyProtocol, unresolved protocol rows)
    9  image / score errors (EmptyImage, SingleClassScores, ...)

``infer`` exits 0 for bonafide and 10 for attack; errors are 11 (bundle or
config), 12 (unreadable input) and 13 (anything else). ``select-frame`` uses
12 for an empty or unreadable frame directory and 13 otherwise.

Errors are also written to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import RunConfig, dump_run_config, load_run_config, with_overrides
from .dataset import Split, load_manifest
from .ensemble import infer, load_bundle, save_bundle, train_ensemble
from .errors import (
    BundleError,
    EmptyImage,
    EmptyVideo,
    ImageError,
    InvalidConfig,
    MissingFile,
    PadError,
)
from .explain import GradCamConfig, grad_cam, write_heatmap
from .frames import VideoFrames, extract_region, locate_face, select_best_frame
from .imaging import list_frames, load_image
from .protocol import generate_protocol_dataset, load_protocol, resolve_rows
from .report import build_report, read_scores, summary_line, write_report, write_scores
from .synthetic import generate_desk_dataset

log = logging.getLogger("ensemble_pad")

EXIT_BONAFIDE, EXIT_ATTACK = 0, 10
EXIT_INFER_BUNDLE, EXIT_UNREADABLE, EXIT_OTHER = 11, 12, 13


def _emit_error(exc: BaseException, code: int) -> int:
    name = exc.name if isinstance(exc, PadError) else type(exc).__name__
    print(json.dumps({"error": name, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    return with_overrides(cfg, seed=args.seed, out_dir=args.out)


def _read_input(path) -> list[np.ndarray]:
    path = Path(path)
    if path.is_dir():
        return [load_image(p) for p in list_frames(path)]
    return [load_image(path)]


def _score_records(ensemble, manifest, samples, locator) -> list[dict]:
    records = []
    for s in samples:
        result = infer(load_image(manifest.resolve(s)), ensemble, locator)
        records.append({
            "sample_path": s.path,
            "p_aggregate": result.decision.aggregate,
            "label": s.label.value,
            "member_scores": result.decision.to_dict()["member_scores"],
            "scenario_id": s.scenario_id,
            "subject_id": s.subject_id,
            "verdict": result.decision.verdict.value,
        })
    return records


# -- commands -----------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _run_config(args)
    if cfg.manifest is None:
        raise InvalidConfig("config key 'manifest' is required for train")
    manifest = load_manifest(cfg.manifest)
    torch.set_num_threads(1)
    trained = train_ensemble(
        manifest, cfg.ensemble_config(), cfg.training_config(), cfg.augmentation_config(),
        cfg.locator_fn(), cfg.band_fraction,
        calibration=None if cfg.threshold is not None else cfg.calibration,
        apcer_limit=cfg.apcer_limit,
    )
    ensemble = trained.ensemble
    ensemble.quality_weights = tuple(cfg.quality_weights)
    out = Path(cfg.out_dir)
    bundle = save_bundle(ensemble, out / "bundle", extra={"config_digest": cfg.digest(), "seed": cfg.seed})
    training = out / "training"
    training.mkdir(parents=True, exist_ok=True)
    for member_id, record in trained.records.items():
        (training / f"{member_id}.json").write_text(json.dumps(record.to_list(), indent=2) + "\n", encoding="utf-8")
    dump_run_config(cfg, out / "config.yaml")
    summary = {"bundle": str(bundle), "threshold": ensemble.rule.threshold, "rule": ensemble.rule.to_dict(),
               "n_val": len(trained.val_scores),
               "final_epoch": {k: r.to_list()[-1] for k, r in trained.records.items()}}
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if not args.quiet:
        print(f"bundle={bundle} threshold={ensemble.rule.threshold:.6f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    bundle_path = Path(args.bundle) if args.bundle else Path(cfg.out_dir) / "bundle"
    ensemble = load_bundle(bundle_path)
    manifest_path = args.manifest or cfg.manifest
    if manifest_path is None:
        raise InvalidConfig("no manifest given (config key 'manifest' or --manifest)")
    manifest = load_manifest(manifest_path)
    protocol_src = args.protocol or cfg.protocol
    locator = cfg.locator_fn()
    if protocol_src:
        protocol = load_protocol(protocol_src)
        samples = [s for _, s in resolve_rows(protocol, manifest)]
    else:
        samples = manifest.split(Split(args.split))
    records = _score_records(ensemble, manifest, samples, locator)
    provenance = {"config_digest": cfg.digest(), "seed": cfg.seed, "bundle": str(bundle_path),
                  "protocol": protocol_src, "version": __version__}
    doc = build_report(records, ensemble.rule.threshold, ensemble.rule.to_dict(), provenance)
    out = Path(cfg.out_dir) / "report"
    write_scores(records, out / "scores.jsonl")
    write_report(doc, out)
    if not args.quiet:
        print(summary_line(doc))
    return 0


def cmd_report(args) -> int:
    cfg = _run_config(args)
    records = read_scores(args.scores)
    doc = build_report(records, args.threshold, None, {"scores": str(args.scores)})
    write_report(doc, Path(cfg.out_dir) / "report")
    if not args.quiet:
        print(summary_line(doc))
    return 0


def cmd_infer(args) -> int:
    try:
        ensemble = load_bundle(args.bundle)
        cfg = _run_config(args)
    except (BundleError, InvalidConfig) as exc:
        return _emit_error(exc, EXIT_INFER_BUNDLE)
    except MissingFile as exc:
        return _emit_error(exc, EXIT_INFER_BUNDLE)
    try:
        frames = _read_input(args.input)
    except (MissingFile, ImageError, OSError) as exc:
        return _emit_error(exc, EXIT_UNREADABLE)
    try:
        result = infer(frames if len(frames) > 1 else frames[0], ensemble, cfg.locator_fn())
    except PadError as exc:
        return _emit_error(exc, EXIT_OTHER)
    d = result.decision
    print(f"verdict={d.verdict.value} aggregate={d.aggregate:.6f} frame={result.frame_index}")
    if args.json:
        Path(args.json).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_BONAFIDE if d.is_bonafide else EXIT_ATTACK


def cmd_explain(args) -> int:
    cfg = _run_config(args)
    ensemble = load_bundle(args.bundle)
    model = ensemble.member(args.member)
    frames = _read_input(args.image)
    index = select_best_frame(frames, cfg.locator_fn(), ensemble.quality_weights)[0] if len(frames) > 1 else 0
    frame = frames[index]
    box = cfg.locator_fn()(frame)
    mc = model.config
    view = extract_region(frame, box, mc.region, mc.backbone.input_resolution, ensemble.band_fraction)
    saliency = grad_cam(model, view, GradCamConfig(args.target))
    stem = f"{Path(args.image).stem}_{args.member}_{saliency.target.value}"
    paths = write_heatmap(saliency, view.pixels, Path(cfg.out_dir) / "explain", stem, args.alpha)
    if not args.quiet:
        print(json.dumps({**paths, **saliency.sidecar()}, sort_keys=True))
    return 0


def cmd_select_frame(args) -> int:
    try:
        cfg = _run_config(args)
        frames = _read_input(args.video)
    except (MissingFile, ImageError, OSError) as exc:
        return _emit_error(exc, EXIT_UNREADABLE)
    except PadError as exc:
        return _emit_error(exc, EXIT_OTHER)
    try:
        index, q = select_best_frame(VideoFrames(tuple(frames)), cfg.locator_fn(), cfg.quality_weights)
    except PadError as exc:
        return _emit_error(exc, EXIT_OTHER)
    print(f"frame={index} sharpness={q.sharpness:.6f} exposure={q.exposure:.6f} "
          f"face_presence={q.face_presence:.6f} total={q.total:.6f}")
    return 0


def cmd_synth(args) -> int:
    cfg = _run_config(args)
    out = Path(cfg.out_dir)
    size = (args.size, args.size)
    if args.protocol:
        manifest = generate_protocol_dataset(out, load_protocol(args.protocol), cfg.seed, size)
    else:
        manifest = generate_desk_dataset(out, args.subjects, args.per_subject, size, cfg.seed,
                                         tuple(args.fractions))
    if not args.quiet:
        print(f"manifest={out / 'manifest.jsonl'} samples={len(manifest)}")
    return 0


# -- parser -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config file (flat YAML)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="ensemble-pad", description="Ensemble face presentation-attack detection.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train the ensemble and write a bundle")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a split or protocol and write a report")
    p.add_argument("--bundle")
    p.add_argument("--manifest")
    p.add_argument("--protocol", help="protocol file or bundled name (table1)")
    p.add_argument("--split", default="test", choices=[s.value for s in Split])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("infer", parents=[common], help="verdict for one image or frame directory")
    p.add_argument("input")
    p.add_argument("--bundle", required=True)
    p.add_argument("--json", help="also write the decision as JSON")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("explain", parents=[common], help="Grad-CAM heatmap for one member")
    p.add_argument("image")
    p.add_argument("--bundle", required=True)
    p.add_argument("--member", required=True)
    p.add_argument("--target", default="attack_score", choices=["bonafide_score", "attack_score"])
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("select-frame", parents=[common], help="pick the best frame of a frame directory")
    p.add_argument("video")
    p.set_defaults(func=cmd_select_frame)

    p = sub.add_parser("report", parents=[common], help="rebuild a report from a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--protocol", help="render one image per row of this protocol instead")
    p.add_argument("--subjects", type=int, default=30)
    p.add_argument("--per-subject", type=int, default=6)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--fractions", type=float, nargs=3, default=(0.6, 0.2, 0.2))
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PadError as exc:
        return _emit_error(exc, exc.code)
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected error")
        return _emit_error(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
