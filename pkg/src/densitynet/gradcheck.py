"""Central finite-difference checks for layers, blocks, whole models and the loss.

Every check compares an analytic gradient against ``(f(x+h) - f(x-h)) / 2h`` in
64-bit floats and reports the vector relative error
``||analytic - numeric|| / max(||analytic||, ||numeric||)``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .loss import LossConfig, combined_loss
from .nn import blocks, layers
from .nn.model import build_model, default_specs

LOSS_TOL = 1e-6
NETWORK_TOL = 1e-5


@dataclass
class CheckResult:
    name: str
    instances: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance

    def describe(self):
        status = "ok  " if self.passed else "FAIL"
        return f"{status} {self.name:<28s} n={self.instances:<3d} max_rel_err={self.max_rel_error:.3e} (tol {self.tolerance:g})"


def relative_error(analytic, numeric):
    a = np.ravel(np.asarray(analytic, dtype=np.float64))
    n = np.ravel(np.asarray(numeric, dtype=np.float64))
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def numeric_gradient(f, x, h=1e-5, indices=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``x`` (perturbed in place).

    ``indices`` selects flat positions; by default every entry is visited.
    """
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(len(idx) if indices is not None else flat.size)
    for k, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[k] = (fp - fm) / (2.0 * h)
    return out


def check_module(module, x, rng, h=1e-5, dropout_seed=None):
    """Relative error of input and parameter gradients of ``sum(g * module(x))``.

    Batch normalization is exercised in training mode. When ``dropout_seed`` is
    given, every Dropout inside is reseeded before each forward so all
    evaluations share one mask.
    """
    drops = [m for m in module.modules() if isinstance(m, layers.Dropout)]

    def fwd():
        for d in drops:
            d.rng = np.random.default_rng(dropout_seed)
        return module.forward(x, True)

    y = fwd()
    g = rng.standard_normal(y.shape)

    def f():
        return float(np.sum(g * fwd()))

    fwd()
    module.zero_grad()
    dx = module.backward(g)
    analytic, numeric = [dx], [numeric_gradient(f, x, h)]
    for name, p in module.named_parameters():
        analytic.append(dict(module.named_gradients())[name].copy())
        numeric.append(numeric_gradient(f, p, h))
    return relative_error(np.concatenate([np.ravel(a) for a in analytic]), np.concatenate(numeric))


def _away_from_zero(rng, shape, margin=0.05):
    """Normal draws pushed off the ReLU kink so central differences never straddle it."""
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin, x) + 0.0


def _primitive_cases():
    """(name, factory(rng) -> (module, input, dropout_seed))."""
    f64 = np.float64
    return [
        ("conv2d 3x3 s1", lambda r: (layers.Conv2d(3, 4, 3, 1, 1, r, f64), r.standard_normal((2, 3, 6, 5)), None)),
        ("conv2d 3x3 s2", lambda r: (layers.Conv2d(3, 4, 3, 2, 1, r, f64), r.standard_normal((2, 3, 7, 6)), None)),
        ("conv2d 1x1 s2", lambda r: (layers.Conv2d(3, 2, 1, 2, 0, r, f64), r.standard_normal((2, 3, 5, 4)), None)),
        ("conv2d 4x4 s4 (patchify)", lambda r: (layers.Conv2d(1, 3, 4, 4, 0, r, f64), r.standard_normal((2, 1, 8, 12)), None)),
        ("depthwise 3x3", lambda r: (layers.DepthwiseConv2d(3, 3, 1, 1, r, f64), r.standard_normal((2, 3, 5, 6)), None)),
        ("depthwise 3x3 s2", lambda r: (layers.DepthwiseConv2d(3, 3, 2, 1, r, f64), r.standard_normal((2, 3, 6, 5)), None)),
        ("batch_norm (train)", lambda r: (_bn(r), r.standard_normal((3, 2, 3, 4)), None)),
        ("relu", lambda r: (layers.ReLU(), _away_from_zero(r, (2, 3, 4, 4)), None)),
        ("sigmoid", lambda r: (layers.Sigmoid(), r.standard_normal((2, 5)), None)),
        ("softmax", lambda r: (layers.Softmax(), r.standard_normal((3, 4)), None)),
        ("global_avg_pool", lambda r: (layers.GlobalAvgPool(), r.standard_normal((2, 3, 4, 5)), None)),
        ("avg_pool 2x2", lambda r: (layers.AvgPool2d(2), r.standard_normal((2, 2, 5, 4)), None)),
        ("fully_connected", lambda r: (layers.Linear(6, 3, r, f64), r.standard_normal((4, 6)), None)),
        ("dropout (train)", lambda r: (layers.Dropout(0.4), r.standard_normal((3, 8)), int(r.integers(1 << 31)))),
        ("se_block", lambda r: (blocks.SEBlock(8, 4, r, f64), r.standard_normal((2, 8, 3, 4)), None)),
    ]


def _bn(rng):
    bn = layers.BatchNorm2d(2)
    bn.params["gamma"][:] = rng.uniform(0.5, 1.5, 2)
    bn.params["beta"][:] = rng.standard_normal(2)
    return bn


def check_primitives(instances=20, seed=0):
    results = []
    for k, (name, make) in enumerate(_primitive_cases()):
        worst = 0.0
        for i in range(instances):
            rng = np.random.default_rng([seed, k, i])
            module, x, dseed = make(rng)
            worst = max(worst, check_module(module, x, rng, h=1e-5, dropout_seed=dseed))
        results.append(CheckResult(name, instances, worst, NETWORK_TOL))
    return results


def check_loss(instances=20, seed=0):
    """Combined loss gradient w.r.t. logits over random batches and configurations."""
    worst = 0.0
    for i in range(instances):
        rng = np.random.default_rng([seed, 1000, i])
        B = int(rng.integers(1, 9))
        z = rng.standard_normal((B, 2)) * rng.uniform(0.5, 4.0)
        y = rng.integers(0, 2, B)
        cfg = LossConfig(gamma=float(rng.uniform(0.0, 4.0)), epsilon=float(rng.uniform(0.0, 0.5)),
                         beta=0.999, class_counts={0: int(rng.integers(1, 2000)), 1: int(rng.integers(1, 2000))})
        _, grad = combined_loss(z, y, cfg)
        num = numeric_gradient(lambda: combined_loss(z, y, cfg)[0], z, h=1e-5)
        worst = max(worst, relative_error(grad, num))
    return CheckResult("combined_loss", instances, worst, LOSS_TOL)


def check_model(spec, instances=20, seed=0, input_size=(64, 128), batch=2, coords=60, step=1e-6):
    """End-to-end gradient of the combined loss w.r.t. the parameters of a built model.

    Each instance rebuilds the model from a fresh seed and draws a random batch,
    then compares ``coords`` randomly sampled parameter entries one by one plus
    the directional derivative along one random direction through all
    parameters. Inputs much smaller than 64x128 shrink late stages to 1x1 maps
    whose batch statistics make the loss too curved for finite differences.
    The step is 1e-6 rather than 1e-5 because a perturbed stem weight moves
    thousands of pre-activations and a wider step tends to push one across a
    ReLU kink.
    """
    worst = 0.0
    loss_cfg = LossConfig(class_counts={0: 100, 1: 900})
    for i in range(instances):
        rng = np.random.default_rng([seed, 2000, i])
        s = replace(spec, input_size=tuple(input_size), seed=int(rng.integers(1 << 31)))
        model = build_model(s, np.float64).train()
        w, h = input_size
        x = rng.random((batch, 1, h, w))
        y = rng.integers(0, 2, batch)
        dseed = int(rng.integers(1 << 31))

        def loss():
            model.reseed_dropout(dseed)
            return combined_loss(model.forward(x), y, loss_cfg)[0]

        model.reseed_dropout(dseed)
        _, dlogits = combined_loss(model.forward(x), y, loss_cfg)
        grads = {k: v.copy() for k, v in model.backward(dlogits).items()}
        params = model.parameters()
        names = list(params)
        sizes = np.array([params[n].size for n in names])
        ends = np.cumsum(sizes)
        pick = rng.choice(int(ends[-1]), size=min(int(ends[-1]), coords), replace=False)
        owner = np.searchsorted(ends, pick, side="right")
        analytic, numeric = [], []
        for j, flat_idx in zip(owner, pick):
            off = int(flat_idx - (ends[j] - sizes[j]))
            analytic.append(grads[names[j]].reshape(-1)[off])
            numeric.append(numeric_gradient(loss, params[names[j]], h=step, indices=[off])[0])
        err = relative_error(analytic, numeric)

        direction = {k: rng.standard_normal(p.shape) for k, p in params.items()}
        norm = np.sqrt(sum(float(np.sum(d * d)) for d in direction.values()))
        along = sum(float(np.sum(grads[k] * direction[k])) for k in params) / norm
        t = np.zeros(1)

        def shifted():
            for k, p in params.items():
                p += t[0] * direction[k] / norm
            try:
                return loss()
            finally:
                for k, p in params.items():
                    p -= t[0] * direction[k] / norm

        err = max(err, relative_error([along], numeric_gradient(shifted, t, h=step)))
        worst = max(worst, err)
    return CheckResult(f"model {spec.name or spec.family}", instances, worst, NETWORK_TOL)


def run_all(instances=20, seed=0, specs=None, input_size=(64, 128)):
    specs = default_specs() if specs is None else specs
    results = check_primitives(instances, seed)
    results.append(check_loss(instances, seed))
    for spec in specs:
        results.append(check_model(spec, instances, seed, input_size))
    return results
