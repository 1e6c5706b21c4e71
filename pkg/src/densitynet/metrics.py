"""Confusion-count metrics, ROC curves with tie-exact AUC, and ROC file export.

Label 1 (high density) is the positive class. Ratios whose denominator is zero
are reported as ``None`` rather than 0.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

METRIC_NAMES = ("f1", "acc", "auc", "sen", "spe")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    f1: float | None
    acc: float | None
    auc: float | None
    sen: float | None
    spe: float | None
    threshold: float = 0.5

    def as_row(self, digits=6):
        return ["" if v is None else f"{v:.{digits}f}" for v in (self.f1, self.acc, self.auc, self.sen, self.spe)]

    def describe(self):
        return "  ".join(f"{k.upper()}={'n/a' if v is None else f'{v:.4f}'}"
                         for k, v in zip(METRIC_NAMES, (self.f1, self.acc, self.auc, self.sen, self.spe)))


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def _validate(labels, scores):
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.ndim != 1 or s.ndim != 1 or len(y) != len(s):
        raise ValueError(f"labels and scores must be equal-length 1-D sequences, got {y.shape} and {s.shape}")
    if len(y) == 0:
        raise ValueError("cannot compute metrics on empty input")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    return y.astype(np.int64), s


def confusion_counts(labels, predicted):
    y = np.asarray(labels)
    p = np.asarray(predicted)
    return ConfusionCounts(
        tp=int(np.sum((p == 1) & (y == 1))),
        fp=int(np.sum((p == 1) & (y == 0))),
        fn=int(np.sum((p == 0) & (y == 1))),
        tn=int(np.sum((p == 0) & (y == 0))),
    )


def _ratio(num, den):
    return num / den if den else None


def classification_metrics(labels, scores, threshold=0.5, pos_label=1):
    """F1/ACC/SEN/SPE with ``score >= threshold`` as a positive call; AUC left as None.

    ``pos_label=0`` scores the low-density class as positive (scores are then
    interpreted as P(class 1), and a sample is called class 0 when below threshold).
    """
    y, s = _validate(labels, scores)
    pred = (s >= threshold).astype(np.int64)
    if pos_label == 0:
        y, pred = 1 - y, 1 - pred
    c = confusion_counts(y, pred)
    return MetricsReport(
        f1=_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        acc=_ratio(c.tp + c.tn, c.total),
        auc=None,
        sen=_ratio(c.tp, c.tp + c.fn),
        spe=_ratio(c.tn, c.tn + c.fp),
        threshold=threshold,
    )


def roc_auc(labels, scores):
    """ROC curve over sorted unique scores and its trapezoidal area.

    Tied scores move along one diagonal segment, so the area equals
    (concordant pairs + ties / 2) / (n_pos * n_neg). The area is accumulated in
    integer arithmetic and divided once at the end.
    """
    y, s = _validate(labels, scores)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined unless both classes are present")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), len(s_sorted) - 1]
    tp = np.r_[0, np.cumsum(y_sorted)[last_of_group]].astype(np.int64)
    fp = np.r_[0, np.cumsum(1 - y_sorted)[last_of_group]].astype(np.int64)
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return RocCurve(
        fpr=fp / n_neg,
        tpr=tp / n_pos,
        thresholds=np.r_[np.inf, s_sorted[last_of_group]],
        auc=twice_area / (2 * n_pos * n_neg),
    )


def evaluate_scores(labels, scores, threshold=0.5):
    """Full report: threshold metrics plus AUC (None when a class is missing)."""
    rep = classification_metrics(labels, scores, threshold)
    y = np.asarray(labels)
    auc = roc_auc(labels, scores).auc if 0 < y.sum() < len(y) else None
    return MetricsReport(rep.f1, rep.acc, auc, rep.sen, rep.spe, threshold)


def write_metrics_csv(path, reports):
    """``reports`` maps a row name (model) to its MetricsReport."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "threshold", *METRIC_NAMES])
        for name, rep in reports.items():
            w.writerow([name, f"{rep.threshold:g}", *rep.as_row()])


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _svg(curves):
    W, H = 800, 600
    left, right, top, bottom = 80, 40, 40, 70
    pw, ph = W - left - right, H - top - bottom

    def xy(fx, ty):
        return f"{left + fx * pw:.2f},{top + (1.0 - ty) * ph:.2f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black" stroke-width="1"/>',
    ]
    for t in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
        x, y = left + t * pw, top + (1 - t) * ph
        out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 20}" font-size="12" text-anchor="middle">{t:.1f}</text>')
        out.append(f'<line x1="{left - 5}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 10}" y="{y + 4:.2f}" font-size="12" text-anchor="end">{t:.1f}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{H - 20}" font-size="14" text-anchor="middle">False positive rate</text>')
    out.append(f'<text x="20" y="{top + ph / 2}" font-size="14" text-anchor="middle" '
               f'transform="rotate(-90 20 {top + ph / 2})">True positive rate</text>')
    out.append(f'<line class="diagonal" x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top}" '
               f'stroke="gray" stroke-dasharray="6,4"/>')
    for i, (name, curve) in enumerate(curves.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(xy(f, t) for f, t in zip(curve.fpr, curve.tpr))
        out.append(f'<polyline class="roc" data-model="{name}" points="{pts}" fill="none" '
                   f'stroke="{color}" stroke-width="2"/>')
    lx, ly = left + pw - 230, top + ph - 20 - 22 * len(curves)
    for i, (name, curve) in enumerate(curves.items()):
        color = _PALETTE[i % len(_PALETTE)]
        y = ly + 22 * i
        out.append(f'<g class="legend"><line x1="{lx}" y1="{y}" x2="{lx + 24}" y2="{y}" stroke="{color}" '
                   f'stroke-width="3"/><text x="{lx + 32}" y="{y + 4}" font-size="13">'
                   f'{name} (AUC = {curve.auc:.3f})</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _write_curve_csv(path, curve):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "tpr"])
        for f, t in zip(curve.fpr, curve.tpr):
            w.writerow([repr(float(f)), repr(float(t))])


def export_roc(curves, basename):
    """Write ROC points as CSV and all curves as one SVG chart.

    ``curves`` is a single RocCurve or a mapping name -> RocCurve. A single curve
    goes to ``<basename>.csv``; several go to ``<basename>.<name>.csv`` each.
    Returns the list of written paths.
    """
    if isinstance(curves, RocCurve):
        curves = {"model": curves}
    base = Path(basename)
    base.parent.mkdir(parents=True, exist_ok=True)
    written = []
    if len(curves) == 1:
        path = base.with_name(base.name + ".csv")
        _write_curve_csv(path, next(iter(curves.values())))
        written.append(path)
    else:
        for name, curve in curves.items():
            path = base.with_name(f"{base.name}.{name}.csv")
            _write_curve_csv(path, curve)
            written.append(path)
    svg = base.with_name(base.name + ".svg")
    svg.write_text(_svg(curves), encoding="utf-8")
    written.append(svg)
    return written
