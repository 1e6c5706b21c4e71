"""Sample manifests, density binarization, splitting, oversampling, synthetic data."""
from __future__ import annotations

import csv
import math
import os
import zlib
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .imageio import write_pgm

LOW_DENSITY = ("A", "B")
HIGH_DENSITY = ("C", "D")
SPLITS = ("", "train", "val", "test")
MANIFEST_HEADER = ["image_id", "path", "density", "split"]


def binarize_density(density):
    """Map a BI-RADS density category to the binary label (A/B -> 0, C/D -> 1)."""
    key = str(density).strip().upper()
    if key in LOW_DENSITY:
        return 0
    if key in HIGH_DENSITY:
        return 1
    raise ValueError(f"unknown BI-RADS density category: {density!r}")


def canonical_density(label):
    """Representative category for a binary label (0 -> 'B', 1 -> 'C')."""
    if label == 0:
        return "B"
    if label == 1:
        return "C"
    raise ValueError(f"label must be 0 or 1, got {label!r}")


@dataclass(frozen=True)
class SampleRecord:
    image_id: str
    path: str
    density: str
    split: str = ""

    def __post_init__(self):
        object.__setattr__(self, "density", str(self.density).strip().upper())
        binarize_density(self.density)
        if self.split not in SPLITS:
            raise ValueError(f"{self.image_id}: unknown split {self.split!r}")

    @property
    def label(self):
        return binarize_density(self.density)


@dataclass(frozen=True)
class Manifest:
    """Ordered sample records.

    ``allow_duplicates`` is only set on oversampled training manifests, where the
    same image legitimately appears more than once.
    """

    records: tuple = ()
    allow_duplicates: bool = False

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not self.allow_duplicates:
            seen = set()
            for r in self.records:
                if r.image_id in seen:
                    raise ValueError(f"duplicate image_id in manifest: {r.image_id}")
                seen.add(r.image_id)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def labels(self):
        return np.array([r.label for r in self.records], dtype=np.int64)

    @property
    def class_counts(self):
        counts = Counter(r.label for r in self.records)
        return {k: counts[k] for k in sorted(counts)}

    def subset(self, split):
        return Manifest(tuple(r for r in self.records if r.split == split), self.allow_duplicates)

    def with_split(self, split):
        return Manifest(tuple(replace(r, split=split) for r in self.records), self.allow_duplicates)


def read_manifest(path):
    """Read a manifest CSV; relative image paths resolve against the CSV's folder."""
    path = Path(path)
    base = path.parent
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"image_id", "path", "density"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: manifest missing columns {sorted(missing)}")
        for row in reader:
            p = row["path"]
            if not os.path.isabs(p):
                p = str(base / p)
            records.append(SampleRecord(row["image_id"], p, row["density"], row.get("split") or ""))
    return Manifest(records)


def write_manifest(manifest, path):
    """Write a manifest CSV with image paths relative to the CSV where possible."""
    path = Path(path)
    base = path.parent.resolve()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in manifest:
            p = Path(r.path).resolve()
            try:
                p = p.relative_to(base)
            except ValueError:
                pass
            w.writerow([r.image_id, p.as_posix(), r.density, r.split])


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def stratified_split(manifest, train_fraction, seed):
    """Per-class random split into (train, val) manifests.

    Each class sends ``round(train_fraction * n_c)`` records to train, clamped so
    both sides keep at least one record. If the per-class roundings disagree with
    the rounded overall total, the majority class absorbs the difference as long
    as it stays within one record of its exact share.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    counts = manifest.class_counts
    for label, n in counts.items():
        if n < 2:
            raise ValueError(f"class {label} has {n} record(s); stratified split needs >= 2")
    n_train = {c: min(max(_round_half_up(train_fraction * n), 1), n - 1) for c, n in counts.items()}
    if counts:
        major = max(counts, key=lambda c: (counts[c], c))
        target = _round_half_up(train_fraction * len(manifest))
        adjusted = n_train[major] + target - sum(n_train.values())
        if abs(adjusted - train_fraction * counts[major]) <= 1 and 1 <= adjusted <= counts[major] - 1:
            n_train[major] = adjusted

    rng = np.random.default_rng(seed)
    labels = manifest.labels
    to_train = np.zeros(len(manifest), dtype=bool)
    for c in sorted(counts):
        idx = np.flatnonzero(labels == c)
        to_train[rng.permutation(idx)[: n_train[c]]] = True
    train = [replace(r, split="train") for r, t in zip(manifest, to_train) if t]
    val = [replace(r, split="val") for r, t in zip(manifest, to_train) if not t]
    return Manifest(train, manifest.allow_duplicates), Manifest(val, manifest.allow_duplicates)


def assign_splits(manifest, test_fraction=0.2, val_fraction=0.2, seed=0):
    """Stratified train/val/test assignment: hold out test first, then split the rest."""
    rest, test = stratified_split(manifest, 1.0 - test_fraction, seed)
    train, val = stratified_split(rest, 1.0 - val_fraction, seed + 1)
    split_of = {r.image_id: r.split for r in train}
    split_of.update({r.image_id: r.split for r in val})
    split_of.update({r.image_id: "test" for r in test})
    return Manifest([replace(r, split=split_of[r.image_id]) for r in manifest])


def oversample_minority(manifest, seed):
    """Duplicate minority records (with replacement) until both classes are equal.

    Every original record is kept; the result is shuffled deterministically.
    """
    counts = manifest.class_counts
    if len(counts) != 2:
        raise ValueError(f"oversampling needs exactly two non-empty classes, got counts {counts}")
    rng = np.random.default_rng(seed)
    minority = min(counts, key=lambda c: (counts[c], c))
    deficit = max(counts.values()) - counts[minority]
    pool = [r for r in manifest if r.label == minority]
    extra = [pool[i] for i in rng.integers(0, len(pool), size=deficit)] if deficit else []
    records = list(manifest) + extra
    order = rng.permutation(len(records))
    return Manifest([records[i] for i in order], allow_duplicates=True)


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic imbalanced texture dataset.

    Low-density images carry a sinusoid at ``base_frequency`` cycles/pixel, dense
    ones at ``base_frequency * (1 + texture_frequency_gap)``.
    """

    n_total: int = 2000
    imbalance_ratio: float = 9.0
    image_size: tuple = (128, 256)
    texture_frequency_gap: float = 1.0
    noise_sigma: float = 0.05
    seed: int = 0
    base_frequency: float = 1.0 / 32.0
    amplitude: float = 0.2
    majority_label: int = 1

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        if self.n_total < 2:
            raise ValueError("n_total must be >= 2")
        if self.imbalance_ratio < 1:
            raise ValueError("imbalance_ratio must be >= 1")
        if self.texture_frequency_gap <= 0:
            raise ValueError("texture_frequency_gap must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.majority_label not in (0, 1):
            raise ValueError("majority_label must be 0 or 1")
        if min(self.image_size) < 1:
            raise ValueError("image_size entries must be >= 1")

    def class_sizes(self):
        n_min = _round_half_up(self.n_total / (self.imbalance_ratio + 1.0))
        n_min = min(max(n_min, 1), self.n_total - 1)
        return {1 - self.majority_label: n_min, self.majority_label: self.n_total - n_min}


def record_seed(seed, image_id):
    return [int(seed), zlib.crc32(image_id.encode("utf-8"))]


def synth_image(config, label, rng):
    w, h = config.image_size
    freq = config.base_frequency * (1.0 + config.texture_frequency_gap * label)
    theta = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    level = rng.uniform(0.4, 0.6)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    texture = np.sin(2.0 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    img = level + config.amplitude * texture + rng.normal(0.0, config.noise_sigma, size=(h, w))
    return np.clip(img, 0.0, 1.0)


def generate_synthetic(config, out_dir):
    """Write a synthetic PGM dataset to ``out_dir`` and return its manifest.

    Images are named by id and each one draws from its own seed (global seed +
    image id), so files are reproducible independent of generation order.
    """
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    if not os.access(out_dir / "images", os.W_OK):
        raise PermissionError(f"output directory is not writable: {out_dir}")

    sizes = config.class_sizes()
    labels = np.array([0] * sizes[0] + [1] * sizes[1])
    labels = np.random.default_rng(config.seed).permutation(labels)
    records = []
    for i, label in enumerate(labels):
        image_id = f"syn{i:05d}"
        rng = np.random.default_rng(record_seed(config.seed, image_id))
        density = ("A", "B")[rng.integers(2)] if label == 0 else ("C", "D")[rng.integers(2)]
        img = synth_image(config, int(label), rng)
        path = out_dir / "images" / f"{image_id}.pgm"
        write_pgm(path, img)
        records.append(SampleRecord(image_id, str(path), density))
    return Manifest(records)
