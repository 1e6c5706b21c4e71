"""Combined focal label-smoothing loss with class-balanced weights."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn.layers import log_softmax

SATURATION = 1e-12


def class_balanced_weights(counts, beta):
    """Effective-number weights ``(1 - beta) / (1 - beta**n_c)``, rescaled to sum to C.

    ``counts`` maps label -> count (or is a sequence indexed by label).
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    if isinstance(counts, dict):
        counts = [counts[k] for k in sorted(counts)]
    n = np.asarray(counts, dtype=np.float64)
    if np.any(n < 1):
        raise ValueError(f"class counts must all be >= 1, got {counts}")
    # 1 - beta**n computed as -expm1(n log beta) to keep precision for beta near 1
    raw = (1.0 - beta) / -np.expm1(n * np.log(beta)) if beta > 0 else np.ones_like(n)
    return raw * len(n) / raw.sum()


def smooth_labels(label, epsilon, num_classes=2):
    """Smoothed target ``(1 - eps) * onehot + eps / C``; accepts a scalar or an array of labels."""
    labels = np.asarray(label)
    if not np.issubdtype(labels.dtype, np.integer) or np.any((labels < 0) | (labels >= num_classes)):
        raise ValueError(f"labels must be integers in [0, {num_classes}), got {label!r}")
    q = np.full(labels.shape + (num_classes,), epsilon / num_classes)
    np.put_along_axis(q, labels[..., None], 1.0 - epsilon + epsilon / num_classes, axis=-1)
    return q


@dataclass
class LossConfig:
    gamma: float = 2.5
    epsilon: float = 0.2
    beta: float = 0.999
    class_counts: dict = field(default_factory=dict)
    weights: np.ndarray = None

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        self.class_counts = {int(k): int(v) for k, v in self.class_counts.items()}
        if self.weights is None:
            if self.class_counts:
                self.weights = class_balanced_weights(self.class_counts, self.beta)
            else:
                self.weights = np.ones(2)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(self.weights <= 0):
            raise ValueError("class weights must be positive")

    @classmethod
    def cross_entropy(cls, num_classes=2):
        """Plain mean cross-entropy: no focusing, no smoothing, uniform weights."""
        return cls(gamma=0.0, epsilon=0.0, beta=0.0, weights=np.ones(num_classes))


def combined_loss(logits, labels, config):
    """Mean over the batch of ``-w[y] * sum_c q_c (1 - p_c)**gamma log p_c``.

    Returns ``(loss, dloss/dlogits)``.
    """
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("combined_loss: logits contain non-finite values")
    labels = np.asarray(labels)
    B, C = z.shape
    q = smooth_labels(labels, config.epsilon, C)
    w = config.weights[labels][:, None]
    g = config.gamma

    logp = log_softmax(z)
    p = np.exp(logp)
    one_minus = -np.expm1(logp)
    live = one_minus >= SATURATION
    safe = np.where(live, one_minus, 1.0)
    focal = np.where(live, safe ** g, 0.0) if g > 0 else np.ones_like(p)
    per_sample = -(w * q * focal * logp).sum(axis=1)
    loss = per_sample.mean()

    # h_c = p_c * dL/dp_c, so that dL/dz_j = h_j - p_j * sum_c h_c (no division by p)
    if g > 0:
        dfocal = np.where(live, g * safe ** (g - 1.0), 0.0)
        h = -w * q * (focal - p * dfocal * logp)
    else:
        h = -w * q
    grad = (h - p * h.sum(axis=1, keepdims=True)) / B
    return float(loss), grad
