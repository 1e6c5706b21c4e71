"""Validation-weighted soft voting."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

WEIGHT_METRICS = ("f1", "acc", "auc")


def compute_weights(val_scores):
    s = np.asarray(val_scores, dtype=np.float64)
    if s.ndim != 1 or len(s) == 0:
        raise ValueError("need a non-empty list of member validation scores")
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise ValueError(f"member validation scores must be positive, got {s.tolist()}")
    return s / s.sum()


def soft_vote(member_probs, weights):
    """Weighted average of member probability matrices, all (B, 2) over the same batch."""
    probs = [np.asarray(p, dtype=np.float64) for p in member_probs]
    w = np.asarray(weights, dtype=np.float64)
    if not probs:
        raise ValueError("no ensemble members")
    if len(probs) != len(w):
        raise ValueError(f"{len(probs)} members but {len(w)} weights")
    shape = probs[0].shape
    for i, p in enumerate(probs):
        if p.shape != shape:
            raise ValueError(f"member {i} has shape {p.shape}, expected {shape}")
    return np.tensordot(w, np.stack(probs), axes=1)


def decide(probs, threshold=0.5):
    """Label 1 iff P(class 1) >= threshold."""
    return (np.asarray(probs)[:, 1] >= threshold).astype(np.int64)


@dataclass
class EnsembleSpec:
    members: list
    member_val_scores: list
    metric: str = "f1"
    weights: list = None

    def __post_init__(self):
        if self.metric not in WEIGHT_METRICS:
            raise ValueError(f"unknown weighting metric {self.metric!r}; choose from {WEIGHT_METRICS}")
        if len(self.members) != len(self.member_val_scores):
            raise ValueError("members and member_val_scores differ in length")
        self.weights = compute_weights(self.member_val_scores).tolist()

    def save(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(d["members"], d["member_val_scores"], d.get("metric", "f1"))


def write_predictions(path, image_ids, probs, labels, threshold=0.5):
    """Prediction dump with columns image_id,p0,p1,label,pred."""
    probs = np.asarray(probs)
    pred = decide(probs, threshold)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "p0", "p1", "label", "pred"])
        for i, row, y, yhat in zip(image_ids, probs, labels, pred):
            w.writerow([i, f"{row[0]:.10f}", f"{row[1]:.10f}", int(y), int(yhat)])


def read_predictions(path):
    """Return ``(image_ids, probs (N,2), labels)`` from a prediction dump."""
    ids, probs, labels = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"image_id", "p0", "p1", "label"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: prediction file missing columns {sorted(missing)}")
        for row in reader:
            ids.append(row["image_id"])
            probs.append((float(row["p0"]), float(row["p1"])))
            labels.append(int(row["label"]))
    return ids, np.array(probs, dtype=np.float64).reshape(-1, 2), np.array(labels, dtype=np.int64)
