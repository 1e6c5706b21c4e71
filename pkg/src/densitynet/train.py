"""AdamW, warm-restart cosine schedule, gradient clipping, early stopping, training loop."""
from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .loss import LossConfig, combined_loss
from .metrics import evaluate_scores
from .nn.checkpoint import save_checkpoint
from .nn.layers import softmax
from .nn.model import build_model
from .preprocess import augment, augment_rng

log = logging.getLogger(__name__)

LOG_HEADER = ["epoch", "lr", "train_loss", "val_loss", "val_f1", "val_acc", "val_auc", "val_sen", "val_spe"]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    restart_period: int = 10
    max_epochs: int = 100
    early_stop_min_delta: float = 0.001
    early_stop_patience: int = 10
    grad_clip_max_norm: float = 1.0
    batch_size: int = 8
    seed: int = 0
    precision: str = "float32"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0 or self.grad_clip_max_norm <= 0:
            raise ValueError("learning rate and clip norm must be positive, weight decay non-negative")
        if self.restart_period < 1 or self.max_epochs < 0 or self.early_stop_patience < 1:
            raise ValueError("restart period and patience must be >= 1, max_epochs >= 0")
        if self.early_stop_min_delta < 0:
            raise ValueError("early_stop_min_delta must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for batch normalization")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be 'float32' or 'float64'")


@dataclass(frozen=True)
class AdamWHyper:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def decays(name, param):
    """Weight decay applies to conv/linear kernels only, not to biases or normalization parameters."""
    return param.ndim > 1


def adamw_step(params, grads, state, hyper):
    """One in-place AdamW update. Decay ``theta -= lr*wd*theta`` is applied before the Adam step."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}; step rejected")
    state.step += 1
    t = state.step
    c1 = 1.0 - hyper.beta1 ** t
    c2 = 1.0 - hyper.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if p.shape != g.shape:
            raise ValueError(f"{name}: parameter shape {p.shape} != gradient shape {g.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if hyper.weight_decay and decays(name, p):
            p -= hyper.lr * hyper.weight_decay * p
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * g * g
        p -= hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
    return params, state


def lr_schedule(epoch, base_lr=1e-4, restart_period=10):
    """Cosine annealing to zero within each cycle, restarting at base_lr every period."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    t = epoch % restart_period
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * t / restart_period))


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_gradients(grads, max_norm=1.0):
    """Scale all gradients by max_norm/norm when the global L2 norm exceeds max_norm.

    Returns ``(grads, norm_before_clipping)``; arrays are scaled in place.
    """
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return grads, norm


def early_stop(history, min_delta=0.001, patience=10):
    """True when none of the last ``patience`` epochs beat the best earlier loss by ``min_delta``."""
    if len(history) == 0:
        raise ValueError("early_stop needs a non-empty history")
    if len(history) <= patience:
        return False
    best = min(history[:-patience])
    for v in history[-patience:]:
        if best - v >= min_delta - 1e-12:
            return False
        best = min(best, v)
    return True


@dataclass
class ArraySet:
    """In-memory conditioned images: ids, (N, H, W) float array, int labels."""

    ids: list
    images: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.ids)

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return ArraySet([self.ids[i] for i in idx], self.images[idx], self.labels[idx])


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    val: object  # MetricsReport


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    @property
    def best_epoch(self):
        if not self.records:
            return None
        return min(self.records, key=lambda r: (r.val_loss, r.epoch)).epoch

    def rows(self):
        for r in self.records:
            yield [str(r.epoch), f"{r.lr:.10g}", f"{r.train_loss:.8f}", f"{r.val_loss:.8f}", *r.val.as_row()]

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_HEADER)
            w.writerows(self.rows())


@dataclass
class TrainResult:
    model: object
    log: TrainLog
    checkpoint: Path | None = None


class TrainingDiverged(RuntimeError):
    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


def _snapshot(model):
    return ({k: v.copy() for k, v in model.parameters().items()},
            {k: v.copy() for k, v in model.buffers().items()})


def evaluate_loss(model, data, loss_cfg, batch_size=64):
    """Eval-mode probabilities and mean combined loss over a whole set."""
    model.eval()
    total, probs = 0.0, []
    for i in range(0, len(data), batch_size):
        x = data.images[i:i + batch_size][:, None]
        logits = model.forward(x).astype(np.float64)
        loss, _ = combined_loss(logits, data.labels[i:i + batch_size], loss_cfg)
        total += loss * len(x)
        probs.append(softmax(logits))
    return np.concatenate(probs), total / max(len(data), 1)


def _batch(data, idx, aug, seed, epoch, dtype):
    imgs = data.images[idx]
    if aug is not None:
        imgs = np.stack([augment(imgs[k], aug, augment_rng(seed, epoch, i)) for k, i in enumerate(idx)])
    return imgs[:, None].astype(dtype, copy=False)


def train_model(spec, train_set, val_set, loss_cfg, config, augment_config=None, out_dir=None, name=None):
    """Train one model; keep the epoch with the lowest validation loss.

    Data order, augmentation draws, dropout masks and initialization all derive
    from ``config.seed`` and ``spec.seed``, so identical inputs give identical
    logs and checkpoints. With ``out_dir`` the best checkpoint and the CSV log
    are written as ``<name>.ckpt`` and ``<name>_log.csv``.
    """
    name = name or spec.name or spec.family
    dtype = np.float32 if config.precision == "float32" else np.float64
    model = build_model(spec, dtype)
    tlog = TrainLog()
    ckpt = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / f"{name}.ckpt"

    def persist(best_epoch):
        if ckpt is not None:
            save_checkpoint(ckpt, model, {"name": name, "best_epoch": best_epoch,
                                          "epochs_run": len(tlog.records)})
            tlog.write_csv(out_dir / f"{name}_log.csv")

    if config.max_epochs == 0:
        persist(None)
        return TrainResult(model.eval(), tlog, ckpt)

    state = AdamState()
    best, best_loss, history = _snapshot(model), math.inf, []
    n = len(train_set)
    for epoch in range(config.max_epochs):
        lr = lr_schedule(epoch, config.learning_rate, config.restart_period)
        hyper = AdamWHyper(lr=lr, weight_decay=config.weight_decay)
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        model.train()
        model.reseed_dropout([spec.seed, config.seed, epoch])
        total, seen = 0.0, 0
        try:
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                if len(idx) < 2:
                    continue  # a lone trailing sample cannot be batch-normalized
                x = _batch(train_set, idx, augment_config, config.seed, epoch, dtype)
                logits = model.forward(x).astype(np.float64)
                loss, dlogits = combined_loss(logits, train_set.labels[idx], loss_cfg)
                grads = model.backward(dlogits)
                clip_gradients(grads, config.grad_clip_max_norm)
                adamw_step(model.parameters(), grads, state, hyper)
                total += loss * len(idx)
                seen += len(idx)
            train_loss = total / max(seen, 1)
            probs, val_loss = evaluate_loss(model, val_set, loss_cfg)
            diverged = not (math.isfinite(train_loss) and math.isfinite(val_loss))
        except (ValueError, FloatingPointError) as exc:
            if "non-finite" not in str(exc):
                raise
            diverged = True
        if diverged:
            model.load_state(*best)
            persist(tlog.best_epoch)
            raise TrainingDiverged(f"{name}: non-finite loss at epoch {epoch}", TrainResult(model.eval(), tlog, ckpt))
        report = evaluate_scores(val_set.labels, probs[:, 1])
        tlog.records.append(EpochRecord(epoch, lr, train_loss, val_loss, report))
        log.info("%s epoch %d lr=%.3g train=%.4f val=%.4f %s", name, epoch, lr, train_loss, val_loss, report.describe())
        if val_loss < best_loss:
            best_loss = val_loss
            best = _snapshot(model)
            persist(epoch)
        history.append(val_loss)
        if early_stop(history, config.early_stop_min_delta, config.early_stop_patience):
            break

    model.load_state(*best)
    persist(tlog.best_epoch)
    return TrainResult(model.eval(), tlog, ckpt)
