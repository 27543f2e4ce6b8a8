"""Command-line entry point: generate, train, infer, eval, search.

Exit codes: 0 success, 2 validation error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .data_gen import GenConfig, gen_dataset
from .errors import ConfigError, JoinMismatch, RecordingTooShort, RRBurdenError, ValidationError
from .evaluation import PatientResult, build_report, patient_diagnosis, write_report
from .formats import (
    fmt_float,
    read_manifest,
    read_predictions,
    window_rows,
    write_predictions,
)
from .fsutil import atomic_write_text, read_text
from .model import (
    Hyperparams,
    build_stage1,
    build_stage2,
    full_inference,
    hyper_search,
    load_bundle,
    save_bundle,
    stage2_examples,
    train_stage1,
    train_stage2,
)
from .rr_core import reference_severity, true_burden, window_batch

log = logging.getLogger("rrburden")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


@dataclass
class RunConfig:
    hyperparams: dict = field(default_factory=dict)
    seed: int = 0
    allow_out_of_range: bool = False
    stage1_only: bool = False
    trials: int = 10
    folds: int = 5

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        if path is None:
            return cls()
        data = _load_json(path)
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"{path}: unknown config key(s): {', '.join(unknown)}")
        return cls(**data)

    def hp(self, allow_out_of_range: bool = False) -> Hyperparams:
        hp = Hyperparams.from_dict(self.hyperparams)
        return hp.validate(allow_out_of_range or self.allow_out_of_range)


def _load_json(path) -> dict:
    try:
        data = json.loads(read_text(path))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def _require(args, name):
    value = getattr(args, name)
    if value is None:
        raise ConfigError(f"--{name.replace('_', '-')} is required")
    return value


def _seed(args, default: int) -> int:
    return default if args.seed is None else args.seed


# --- generate ----------------------------------------------------------------


def cmd_generate(args) -> int:
    data = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        data["seed"] = args.seed
    cfg = GenConfig.from_dict(data).validate()
    out = Path(_require(args, "out"))
    rows = gen_dataset(cfg, out, args.threads)
    atomic_write_text(out / "generation.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    manifest = read_manifest(out / "manifest.csv")
    print(f"{'recording_id':<14} {'target':>7} {'afb':>8} severity")
    for i, row in enumerate(rows):
        sev = reference_severity(manifest.recording(row)).label
        target = cfg.target_afb[i % len(cfg.target_afb)]
        print(f"{row.recording_id:<14} {target:7.2f} {row.reference_afb:8.3f} {sev}")
    return EXIT_OK


# --- train -------------------------------------------------------------------


def cmd_train(args) -> int:
    rc = RunConfig.load(args.config)
    hp = rc.hp(args.allow_out_of_range)
    seed = _seed(args, rc.seed)
    manifest = read_manifest(_require(args, "manifest"))
    recs = list(manifest.recordings())
    batches = []
    for r in recs:
        try:
            batches.append((r, window_batch(r, hp.w_s)))
        except RecordingTooShort as exc:
            warnings.warn(f"skipping {r.id}: {exc}")
    log.info("training on %d recordings", len(batches))
    m1 = build_stage1(hp, seed, allow_out_of_range=True)
    train_stage1(m1, [b for _, b in batches])
    m2 = None
    if not (args.stage1_only or rc.stage1_only):
        examples = stage2_examples(m1, [b for _, b in batches], [true_burden(r) for r, _ in batches],
                                   hp.stage2_binary_input)
        m2 = train_stage2(build_stage2(hp, seed), examples)
    out = Path(_require(args, "out"))
    save_bundle(out, m1, m2, {"manifest": str(manifest.path), "n_recordings": len(batches)})
    print(f"bundle written to {out} (tau1={m1.threshold:.4f}"
          + ("" if m2 is None else f", tau2={m2.threshold:.4f}") + ")")
    return EXIT_OK


# --- infer -------------------------------------------------------------------


def run_inference(bundle_dir, manifest_path, out_dir, threads: int = 1) -> dict:
    m1, m2, bundle = load_bundle(bundle_dir)
    manifest = read_manifest(manifest_path)

    def one(row):
        rec = manifest.recording(row)
        try:
            return row.recording_id, full_inference(m1, m2, rec), None
        except RecordingTooShort as exc:
            return row.recording_id, None, str(exc)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(one, manifest.rows))
    win_rows, rec_rows, skipped = [], [], []
    for rid, res, err in results:
        if res is None:
            warnings.warn(f"skipping {rid}: {err}")
            skipped.append([rid, err])
            continue
        win_rows += window_rows(rid, res)
        rec_rows.append([rid, fmt_float(res.estimated_afb), res.severity.label,
                         patient_diagnosis(res.estimated_afb)])
    write_predictions(out_dir, win_rows, rec_rows, skipped)
    meta = {"w_s": m1.hp.w_s, "stage2": m2 is not None, "tau1": m1.threshold,
            "tau2": None if m2 is None else m2.threshold, "version": bundle["version"]}
    atomic_write_text(Path(out_dir) / "meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return {"n_recordings": len(rec_rows), "skipped": len(skipped)}


def cmd_infer(args) -> int:
    summary = run_inference(_require(args, "bundle"), _require(args, "manifest"),
                            _require(args, "out"), args.threads)
    print(f"predicted {summary['n_recordings']} recordings, skipped {summary['skipped']}")
    return EXIT_OK


# --- eval --------------------------------------------------------------------


def collect_results(pred_dir, manifest_path) -> list[PatientResult]:
    """Join prediction tables with manifest references into PatientResults."""
    meta = _load_json(Path(pred_dir) / "meta.json")
    windows, recs = read_predictions(pred_dir)
    manifest = read_manifest(manifest_path)
    for rid in list(windows) + list(recs):
        if rid not in manifest:
            raise JoinMismatch(f"prediction for {rid!r} has no manifest entry")
    out = []
    for rid, info in recs.items():
        row = manifest.row(rid)
        rec = manifest.recording(row)
        wb = window_batch(rec, meta["w_s"])
        preds = sorted(windows.get(rid, []), key=lambda w: w.window_index)
        if [w.window_index for w in preds] != list(range(len(wb))):
            raise JoinMismatch(f"{rid}: predicted windows do not match the recording's segmentation")
        out.append(PatientResult(
            recording_id=rid,
            durations=wb.duration_ms,
            ref_labels=wb.ref_label,
            pred_labels=np.array([w.final_label for w in preds], dtype=np.int8),
            scores=np.array([w.score for w in preds]),
            categories=wb.category,
            estimated_afb=info["estimated_afb"],
            reference_diagnosis=row.reference_diagnosis,
            age=row.age,
            sex=row.sex,
            origin=row.origin,
            severity=reference_severity(rec),
            window_index=np.arange(len(wb)),
        ))
    return out


def cmd_eval(args) -> int:
    patients = collect_results(_require(args, "predictions"), _require(args, "manifest"))
    report = build_report(patients)
    out = Path(_require(args, "out"))
    write_report(report, out)
    o = report.overall()
    print(f"windows={o['n_windows']} F1={o['f1']:.4f} Se={o['se']:.4f} PPV={o['ppv']:.4f} "
          f"|E_AF| median={o['eaf_median']:.3f} (Q1 {o['eaf_q1']:.3f}, Q3 {o['eaf_q3']:.3f})")
    if report.afl_miss_rate is not None:
        print(f"AFL miss rate {report.afl_miss_rate:.4f}")
    return EXIT_OK


# --- search ------------------------------------------------------------------


def cmd_search(args) -> int:
    rc = RunConfig.load(args.config)
    allow = args.allow_out_of_range or rc.allow_out_of_range
    base = rc.hp(allow)
    manifest = read_manifest(_require(args, "manifest"))
    trials = args.trials if args.trials is not None else rc.trials
    folds = args.folds if args.folds is not None else rc.folds
    best, results = hyper_search(list(manifest.recordings()), trials, folds, _seed(args, rc.seed), base,
                                 allow_out_of_range=allow)
    names = ["w_s", "n_b", "n_f", "f_l", "d_r1", "n_hu", "d_r2", "alpha"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", *names, "mean_auroc", *[f"fold{i}" for i in range(folds)]])
    for t in results:
        w.writerow([t.index, *[getattr(t.hp, n) for n in names], fmt_float(t.mean_auroc),
                    *[fmt_float(a) for a in t.fold_auroc]])
    out = Path(_require(args, "out"))
    atomic_write_text(out / "search.csv", buf.getvalue())
    atomic_write_text(out / "best.json",
                      json.dumps({"hyperparams": best.to_dict()}, indent=2, sort_keys=True) + "\n")
    print(f"best of {trials}: " + ", ".join(f"{n}={getattr(best, n)}" for n in names))
    return EXIT_OK


# --- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads over recordings")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rrburden", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic cohort")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="train stage 1 and stage 2")
    t.add_argument("--manifest")
    t.add_argument("--stage1-only", action="store_true")
    t.add_argument("--allow-out-of-range", action="store_true")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", parents=[common], help="predict every recording of a manifest")
    i.add_argument("--bundle")
    i.add_argument("--manifest")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", parents=[common], help="score predictions against references")
    e.add_argument("--predictions", help="directory written by 'infer'")
    e.add_argument("--manifest")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("search", parents=[common], help="random hyperparameter search")
    s.add_argument("--manifest")
    s.add_argument("--trials", type=int)
    s.add_argument("--folds", type=int)
    s.add_argument("--allow-out-of-range", action="store_true")
    s.set_defaults(func=cmd_search)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except RRBurdenError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
