"""Command line: one subcommand per pipeline stage.

    densitynet synth | preprocess | train | evaluate | ensemble | roc | gradcheck
        [--config run.json] [--seed N] [--out DIR] [--paper-scale] [--section.key VALUE ...]

Without ``--config`` the CPU-sized profile is used. Every command writes the
resolved configuration to ``<out>/config.json``; timestamps go only to
``<out>/run.log``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import gradcheck, pipeline
from .config import ConfigError, RunConfig, apply_overrides
from .metrics import write_metrics_csv

log = logging.getLogger("densitynet")

COMMANDS = ("synth", "preprocess", "train", "evaluate", "ensemble", "roc", "gradcheck")


class UsageError(Exception):
    pass


def _common(parser):
    parser.add_argument("--config", type=Path, help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="global seed (data, augmentation, init, training)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--paper-scale", action="store_true",
                        help="512x1024 images, full-size model specs, 100 epochs")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="densitynet", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic imbalanced dataset and manifest")
    _common(p)

    p = sub.add_parser("preprocess", help="write conditioned (CLAHE + resized) images")
    _common(p)

    p = sub.add_parser("train", help="train every configured model (or those named)")
    _common(p)
    p.add_argument("--models", help="comma-separated subset of model names")
    p.add_argument("--max-epochs", type=int, help="shortcut for --train.max_epochs")

    p = sub.add_parser("evaluate", help="test-split metrics for checkpoints or a prediction file")
    _common(p)
    p.add_argument("--checkpoint", action="append", type=Path, default=[],
                   help="checkpoint to evaluate (repeatable; default: all configured models)")
    p.add_argument("--predictions", type=Path, help="score an existing image_id,p0,p1,label CSV instead")
    p.add_argument("--metrics-out", type=Path, help="metrics CSV path (default <out>/metrics.csv)")

    p = sub.add_parser("ensemble", help="validation-weighted soft vote of trained members")
    _common(p)
    p.add_argument("--checkpoint", action="append", type=Path, default=[],
                   help="member checkpoint (repeatable; default: all configured models)")

    p = sub.add_parser("roc", help="ROC curves (CSV + SVG) from prediction files")
    _common(p)
    p.add_argument("--predictions", action="append", type=Path, default=None,
                   help="prediction CSV (repeatable; default: <out>/predictions/*.csv)")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _common(p)
    p.add_argument("--instances", type=int, default=20, help="random instances per check")
    return parser


def _split_overrides(extra):
    """Turn leftover ``--a.b value`` / ``--a.b=value`` tokens into (key, value) pairs."""
    pairs, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok:
            raise UsageError(f"unrecognized argument: {tok}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"override {tok} needs a value")
            value = extra[i + 1]
            i += 2
        pairs.append((key.replace("-", "_"), value))
    return pairs


def resolve_config(args, extra):
    config = RunConfig.load(args.config) if args.config else RunConfig.desk()
    if args.paper_scale:
        config = config.paper_scale()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    overrides = _split_overrides(extra)
    if getattr(args, "max_epochs", None) is not None:
        overrides.append(("train.max_epochs", str(args.max_epochs)))
    if args.out:
        overrides.append(("out_dir", args.out))
    return apply_overrides(config, overrides) if overrides else config


def _setup_logging(out_dir, verbose):
    root = logging.getLogger("densitynet")
    root.setLevel(logging.INFO)
    for h in list(root.handlers):
        root.removeHandler(h)
        h.close()
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.INFO if verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(message)s"))
    root.addHandler(console)
    sidecar = logging.FileHandler(Path(out_dir) / "run.log", encoding="utf-8")
    sidecar.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root.addHandler(sidecar)
    return root


def _members(config, checkpoints):
    if checkpoints:
        paths = {p.stem: p for p in checkpoints}
        if len(paths) != len(checkpoints):
            raise UsageError("checkpoint file names must be distinct")
    else:
        paths = pipeline.checkpoint_paths(config)
    return paths, pipeline.load_members(paths)


def cmd_synth(config, args):
    manifest = pipeline.run_synth(config)
    counts = manifest.class_counts
    print(f"wrote {len(manifest)} images ({counts.get(0, 0)} low / {counts.get(1, 0)} high density) "
          f"and {pipeline.out_path(config, 'data', 'manifest.csv')}")


def cmd_preprocess(config, args):
    path = pipeline.run_preprocess(config)
    print(f"conditioned images written; use --dataset.manifest {path} --dataset.conditioned true")


def cmd_train(config, args):
    names = [n.strip() for n in args.models.split(",")] if args.models else None
    data = pipeline.prepare_data(config) if config.train.max_epochs > 0 else None
    results = pipeline.train_members(config, data, names)
    for name, res in results.items():
        best = res.log.best_epoch
        rec = res.log.records[best] if best is not None else None
        detail = f"best epoch {best}, val loss {rec.val_loss:.4f}, {rec.val.describe()}" if rec else "initial weights"
        print(f"{name}: {len(res.log.records)} epochs, {detail}; checkpoint {res.checkpoint}")


def cmd_evaluate(config, args):
    metrics_out = args.metrics_out or pipeline.out_path(config, "metrics.csv")
    if args.predictions:
        report = pipeline.evaluate_prediction_file(args.predictions, config.ensemble.threshold)
        reports = {args.predictions.stem: report}
        write_metrics_csv(metrics_out, reports)
    else:
        _, models = _members(config, args.checkpoint)
        data = pipeline.prepare_data(config)
        reports = pipeline.run_evaluate(config, data, models)
        if args.metrics_out:
            write_metrics_csv(metrics_out, reports)
    for name, rep in reports.items():
        print(f"{name:<20s} {rep.describe()}")
    print(f"metrics written to {metrics_out}")


def cmd_ensemble(config, args):
    paths, models = _members(config, args.checkpoint)
    data = pipeline.prepare_data(config)
    outcome = pipeline.run_ensemble(config, data, models, paths)
    for (name, w) in zip(models, outcome.spec.weights):
        print(f"{name:<20s} weight {w:.4f}  {outcome.reports[name].describe()}")
    ens = outcome.reports[pipeline.ENSEMBLE_NAME]
    print(f"{pipeline.ENSEMBLE_NAME:<20s} {'':13s}{ens.describe()}")
    best = max(r.auc for n, r in outcome.reports.items() if n != pipeline.ENSEMBLE_NAME)
    print(f"ensemble AUC - best member AUC = {ens.auc - best:+.4f}")


def cmd_roc(config, args):
    written, curves = pipeline.run_roc(config, args.predictions)
    for name, c in curves.items():
        print(f"{name:<20s} AUC = {c.auc:.4f}")
    print("wrote " + ", ".join(str(p) for p in written))


def cmd_gradcheck(config, args):
    specs = pipeline.member_specs(config)
    results = gradcheck.run_all(args.instances, config.seed, specs)
    for r in results:
        print(r.describe())
    worst = max(r.max_rel_error for r in results)
    print(f"max relative error: {worst:.3e}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise RuntimeError(f"gradient check failed for: {', '.join(failed)}")


HANDLERS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train, "evaluate": cmd_evaluate,
    "ensemble": cmd_ensemble, "roc": cmd_roc, "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        config = resolve_config(args, extra)
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        logger = _setup_logging(out, args.verbose)
        config.save(out / "config.json")
        logger.info("command %s, out_dir %s", args.command, out)
        HANDLERS[args.command](config, args)
    except (UsageError, ConfigError) as exc:
        print(f"densitynet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"densitynet {args.command}: error: {exc}", file=sys.stderr)
        return 1
    finally:
        for h in list(logging.getLogger("densitynet").handlers):
            h.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
