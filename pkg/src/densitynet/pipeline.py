"""Pipeline stages shared by the command line and the end-to-end experiments.

Output layout under ``config.out_dir``::

    data/manifest.csv, data/images/*.pgm      synth
    conditioned/manifest.csv, .../*.pgm       preprocess
    models/<name>.ckpt, models/<name>_log.csv train
    predictions/<name>.csv                    evaluate / ensemble
    metrics.csv, ensemble.json                evaluate / ensemble
    roc.csv | roc.<name>.csv, roc.svg         roc
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import model_name
from .dataset import Manifest, assign_splits, generate_synthetic, oversample_minority, read_manifest, write_manifest
from .ensemble import EnsembleSpec, read_predictions, soft_vote, write_predictions
from .imageio import read_image, read_unit_image, write_pgm
from .metrics import evaluate_scores, export_roc, roc_auc, write_metrics_csv
from .nn.checkpoint import load_checkpoint
from .preprocess import condition
from .train import ArraySet, train_model

log = logging.getLogger(__name__)

ENSEMBLE_NAME = "ensemble"


def out_path(config, *parts):
    return Path(config.out_dir).joinpath(*parts)


def run_synth(config):
    """Generate the synthetic dataset, assign stratified splits, write the manifest."""
    data_dir = out_path(config, "data")
    manifest = generate_synthetic(config.synth, data_dir)
    manifest = assign_splits(manifest, config.dataset.test_fraction, config.dataset.val_fraction, config.seed)
    write_manifest(manifest, data_dir / "manifest.csv")
    return manifest


def manifest_path(config):
    return Path(config.dataset.manifest) if config.dataset.manifest else out_path(config, "data", "manifest.csv")


def load_manifest(config):
    """Read the configured manifest; records without splits get a seeded stratified assignment."""
    path = manifest_path(config)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path} (run `synth` or set dataset.manifest)")
    manifest = read_manifest(path)
    if all(r.split == "" for r in manifest):
        manifest = assign_splits(manifest, config.dataset.test_fraction, config.dataset.val_fraction, config.seed)
    elif any(r.split == "" for r in manifest):
        raise ValueError(f"{path}: either every record or no record must carry a split")
    return manifest


def load_images(manifest, config):
    """Conditioned (H, W) arrays keyed by image id."""
    images = {}
    tw, th = config.resize.target
    for r in manifest:
        if r.image_id in images:
            continue
        if config.dataset.conditioned:
            img = read_unit_image(r.path)
            if img.shape != (th, tw):
                raise ValueError(f"{r.path}: conditioned image is {img.shape[1]}x{img.shape[0]}, "
                                 f"expected {tw}x{th}")
        else:
            img = condition(read_image(r.path), config.preprocess)
        images[r.image_id] = img
    return images


def run_preprocess(config):
    """Write 16-bit conditioned images plus a manifest pointing at them."""
    manifest = load_manifest(config)
    dest = out_path(config, "conditioned")
    (dest / "images").mkdir(parents=True, exist_ok=True)
    images = load_images(manifest, config)
    records = []
    for r in manifest:
        path = dest / "images" / f"{r.image_id}.pgm"
        write_pgm(path, images[r.image_id], maxval=65535)
        records.append(replace(r, path=str(path)))
    out = dest / "manifest.csv"
    write_manifest(Manifest(records), out)
    return out


def array_set(manifest, images, dtype=np.float32):
    return ArraySet([r.image_id for r in manifest],
                    np.stack([images[r.image_id] for r in manifest]).astype(dtype),
                    manifest.labels)


@dataclass
class DataSplits:
    train: ArraySet
    val: ArraySet
    test: ArraySet
    train_counts: dict


def prepare_data(config, manifest=None, images=None):
    """Conditioned train (oversampled when configured), val and test sets."""
    manifest = load_manifest(config) if manifest is None else manifest
    images = load_images(manifest, config) if images is None else images
    train, val, test = (manifest.subset(s) for s in ("train", "val", "test"))
    for name, part in (("train", train), ("val", val), ("test", test)):
        if len(part) == 0:
            raise ValueError(f"the {name} split is empty")
    counts = train.class_counts
    if config.dataset.oversample:
        train = oversample_minority(train, config.seed)
    return DataSplits(array_set(train, images), array_set(val, images), array_set(test, images), counts)


def member_specs(config, names=None):
    """Model specs sized to the working resolution, optionally filtered by name."""
    specs = [replace(m, input_size=config.resize.target) for m in config.models]
    if names:
        known = {model_name(s) for s in specs}
        missing = sorted(set(names) - known)
        if missing:
            raise ValueError(f"unknown model name(s) {missing}; configured: {sorted(known)}")
        specs = [s for s in specs if model_name(s) in names]
    return specs


def train_members(config, data, names=None):
    """Train each configured model; returns name -> TrainResult.

    ``data`` may be None when ``max_epochs`` is 0: the freshly initialized
    models are then written without reading any images.
    """
    if data is None and config.train.max_epochs > 0:
        raise ValueError("training data is required when max_epochs > 0")
    loss_cfg = config.loss.build(data.train_counts if data else None)
    train_set, val_set = (data.train, data.val) if data else (None, None)
    results = {}
    for spec in member_specs(config, names):
        name = model_name(spec)
        log.info("training %s (%d epochs max)", name, config.train.max_epochs)
        results[name] = train_model(spec, train_set, val_set, loss_cfg, config.train,
                                    config.augment, out_path(config, "models"), name)
    return results


def checkpoint_paths(config, names=None):
    return {model_name(s): out_path(config, "models", f"{model_name(s)}.ckpt") for s in member_specs(config, names)}


def load_members(paths):
    """name -> Model for checkpoint paths; missing files are reported together."""
    missing = [str(p) for p in paths.values() if not Path(p).is_file()]
    if missing:
        raise FileNotFoundError(f"checkpoint(s) not found: {', '.join(missing)} (run `train` first)")
    return {name: load_checkpoint(p)[0] for name, p in paths.items()}


def predict(models, data):
    return {name: m.predict_proba(data.images) for name, m in models.items()}


def write_member_predictions(config, data, probs):
    pred_dir = out_path(config, "predictions")
    pred_dir.mkdir(parents=True, exist_ok=True)
    for name, p in probs.items():
        write_predictions(pred_dir / f"{name}.csv", data.ids, p, data.labels, config.ensemble.threshold)


def reports_for(labels, probs, threshold):
    return {name: evaluate_scores(labels, p[:, 1], threshold) for name, p in probs.items()}


def run_evaluate(config, data, models):
    """Test-set reports for each model; writes predictions and metrics.csv."""
    probs = predict(models, data.test)
    write_member_predictions(config, data.test, probs)
    reports = reports_for(data.test.labels, probs, config.ensemble.threshold)
    write_metrics_csv(out_path(config, "metrics.csv"), reports)
    return reports


def evaluate_prediction_file(path, threshold=0.5):
    _, probs, labels = read_predictions(path)
    if len(labels) == 0:
        raise ValueError(f"{path}: no predictions")
    return evaluate_scores(labels, probs[:, 1], threshold)


@dataclass
class EnsembleOutcome:
    spec: EnsembleSpec
    reports: dict  # name -> MetricsReport on the test split, members first, ensemble last
    probs: dict


def run_ensemble(config, data, models, paths=None):
    """Weight members by validation score, soft-vote on test, write all artifacts.

    ``paths`` (name -> checkpoint) is recorded in ``ensemble.json`` relative to
    the output directory; it defaults to the standard checkpoint locations.
    """
    metric = config.ensemble.metric
    threshold = config.ensemble.threshold
    val_probs = predict(models, data.val)
    val_reports = reports_for(data.val.labels, val_probs, threshold)
    scores = []
    for name, rep in val_reports.items():
        value = getattr(rep, metric)
        if value is None or value <= 0:
            raise ValueError(f"member {name}: validation {metric} is {value}; cannot derive a positive voting weight")
        scores.append(float(value))
    paths = paths or {n: out_path(config, "models", f"{n}.ckpt") for n in models}
    root = Path(config.out_dir).resolve()
    refs = []
    for n in models:
        p = Path(paths[n]).resolve()
        refs.append(p.relative_to(root).as_posix() if p.is_relative_to(root) else str(p))
    spec = EnsembleSpec(refs, scores, metric)
    spec.save(out_path(config, "ensemble.json"))

    probs = predict(models, data.test)
    probs[ENSEMBLE_NAME] = soft_vote(list(probs.values()), spec.weights)
    write_member_predictions(config, data.test, probs)
    reports = reports_for(data.test.labels, probs, threshold)
    write_metrics_csv(out_path(config, "metrics.csv"), reports)
    return EnsembleOutcome(spec, reports, probs)


def run_roc(config, prediction_files=None):
    """ROC curves for prediction dumps (default: every file under predictions/)."""
    if prediction_files is None:
        pred_dir = out_path(config, "predictions")
        files = sorted(pred_dir.glob("*.csv"), key=lambda p: (p.stem == ENSEMBLE_NAME, p.stem))
        if not files:
            raise FileNotFoundError(f"no prediction files in {pred_dir} (run `evaluate` or `ensemble` first)")
    else:
        files = [Path(p) for p in prediction_files]
    curves = {}
    for f in files:
        _, probs, labels = read_predictions(f)
        curves[f.stem] = roc_auc(labels, probs[:, 1])
    return export_roc(curves, out_path(config, "roc")), curves
