"""Command-line entry points: synth, split, train, predict, score, stats, curves.

Exit codes: 0 success, 1 validation error, 2 I/O error. Diagnostics go to
stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import List, Optional

from . import dataset, scoring, trainer

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2

log = logging.getLogger("pcg_mtl")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _write_text(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def cmd_synth(args) -> None:
    cfg = dataset.SynthConfig(murmur_snr_db=args.murmur_snr)
    patients = dataset.synth_dataset(args.n, cfg, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset.write_dataset(patients, out)
    log.info("wrote %d patients to %s", len(patients), out)


def cmd_split(args) -> None:
    if not 0 < args.ratio < 1:
        raise ValueError(f"--ratio must lie strictly between 0 and 1, got {args.ratio}")
    patients = dataset.load_dataset(args.data)
    spec = dataset.stratified_split(patients, args.ratio, args.seed)
    _write_text(args.out, spec.to_json() + "\n")
    log.info("split: %d train, %d validation", len(spec.train_ids), len(spec.val_ids))


def _load_split(path: str) -> dataset.SplitSpec:
    try:
        return dataset.SplitSpec.from_json(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def _load_run_config(path: Optional[str]) -> trainer.TrainConfig:
    if path is None:
        return trainer.TrainConfig()
    text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(d, dict):
        raise ValueError(f"{path}: run config must be a JSON object")
    try:
        return trainer.TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path}: {exc}") from None


def cmd_train(args) -> None:
    cfg = _load_run_config(args.config)
    split = _load_split(args.split)
    train_p = dataset.load_dataset(args.data, split.train_ids)
    val_p = dataset.load_dataset(args.data, split.val_ids)
    result = trainer.train(cfg, train_p, val_p, out_dir=args.out, resume=args.resume)
    log.info("best epoch %d, validation murmur wacc %.4f", result.best_epoch, result.best_murmur_wacc)


def cmd_predict(args) -> None:
    ids = None
    if args.split is not None:
        split = _load_split(args.split)
        ids = split.val_ids if args.subset == "val" else split.train_ids
    patients = dataset.load_dataset(args.data, ids)
    if not patients:
        raise ValueError(f"no patients to predict in {args.data}")
    preds, rec_probs = trainer.predict(args.checkpoint, patients)
    scoring.write_predictions(preds, args.out)
    if args.recording_probs:
        _write_text(args.recording_probs, json.dumps(
            {k: {"murmur": m, "outcome": o} for k, (m, o) in sorted(rec_probs.items())},
            indent=2, sort_keys=True,
        ) + "\n")
    log.info("wrote %d prediction files to %s", len(preds), args.out)


def cmd_score(args) -> None:
    headers = dataset.load_headers(args.truth)
    truth = {h.id: (h.murmur, h.outcome) for h in headers}
    preds = scoring.read_predictions(args.pred)
    if not preds:
        raise ValueError(f"no prediction files in {args.pred}")
    unknown = sorted(set(preds) - set(truth))
    if unknown:
        raise ValueError(f"predictions for patients missing from {args.truth}: {unknown[:5]}")
    if len(preds) < len(truth):
        log.info("scoring %d of %d labelled patients (those with predictions)", len(preds), len(truth))
        truth = {k: truth[k] for k in preds}
    report = scoring.score(truth, {k: (p.murmur, p.outcome) for k, p in preds.items()})
    _write_text(args.out, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def cmd_stats(args) -> None:
    headers = dataset.load_headers(args.data)
    outcomes = [o.value for o in dataset.OUTCOME_CLASSES]
    by = {}
    for var, get in (("age", lambda h: h.age), ("sex", lambda h: h.sex),
                     ("pregnant", lambda h: str(h.pregnant)), ("murmur", lambda h: h.murmur.value)):
        counts = Counter((get(h), h.outcome.value) for h in headers)
        by[var] = {
            level: {o: counts[(level, o)] for o in outcomes}
            for level in sorted({k[0] for k in counts})
        }
    out = {
        "n_patients": len(headers),
        "outcome": {o: sum(h.outcome.value == o for h in headers) for o in outcomes},
        "outcome_by": by,
    }
    _write_text(args.out, json.dumps(out, indent=2, sort_keys=True) + "\n")


def cmd_curves(args) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["run", "heads", "loss", "seed", "epoch",
                     "val_murmur_wacc", "val_outcome_wacc", "val_outcome_cost"])
    for run in args.runs:
        run = Path(run)
        cfg = json.loads((run / "config.json").read_text(encoding="utf-8"))
        for e in trainer.read_log_csv(run / "epochs.csv"):
            writer.writerow([run.name, cfg.get("heads"), cfg.get("loss"), cfg.get("seed"), e.epoch,
                             repr(e.val_murmur_wacc), repr(e.val_outcome_wacc), repr(e.val_outcome_cost)])
    _write_text(args.out, buf.getvalue())


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pcg-mtl", description="Multi-task PCG murmur and outcome pipeline")
    p.add_argument("-q", "--quiet", action="store_true", help="only report errors")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--murmur-snr", type=float, default=10.0, help="heart-to-murmur power ratio, dB")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="stratified patient-level train/validation split")
    s.add_argument("--data", required=True)
    s.add_argument("--ratio", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None, help="split JSON (default: stdout)")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--data", required=True)
    s.add_argument("--split", required=True)
    s.add_argument("--config", default=None, help="run config JSON (default: built-in defaults)")
    s.add_argument("--out", required=True, help="run directory")
    s.add_argument("--resume", action="store_true", help="continue from <out>/last.ckpt")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="write per-patient prediction files")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", default=None, help="restrict to one side of a split")
    s.add_argument("--subset", choices=("val", "train"), default="val")
    s.add_argument("--recording-probs", default=None, help="also write per-recording probabilities JSON")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("score", help="score predictions against labelled headers")
    s.add_argument("--truth", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--out", default=None, help="report JSON (default: stdout)")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("stats", help="outcome counts by demographic variable")
    s.add_argument("--data", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("curves", help="merge per-epoch validation metrics of several runs")
    s.add_argument("--runs", nargs="+", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_curves)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(
        level=logging.ERROR if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
