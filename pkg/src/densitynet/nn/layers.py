"""Layer primitives with explicit forward/backward passes.

Every layer caches what it needs during ``forward`` and consumes it in
``backward``, which returns the input gradient and accumulates parameter
gradients into ``self.grads``. Activations are NCHW arrays.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def _check_shape(name, got, expected):
    if tuple(got) != tuple(expected):
        raise ShapeError(f"{name}: expected shape {tuple(expected)}, got {tuple(got)}")


class Module:
    """Base class: named parameters, their gradients, and child modules."""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self.children = {}

    def add(self, name, module):
        self.children[name] = module
        return module

    def named_parameters(self, prefix=""):
        for k, v in self.params.items():
            yield prefix + k, v
        for name, child in self.children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_gradients(self, prefix=""):
        for k in self.params:
            yield prefix + k, self.grads[k]
        for name, child in self.children.items():
            yield from child.named_gradients(f"{prefix}{name}.")

    def named_buffers(self, prefix=""):
        for k, v in self.buffers.items():
            yield prefix + k, v
        for name, child in self.children.items():
            yield from child.named_buffers(f"{prefix}{name}.")

    def modules(self):
        yield self
        for child in self.children.values():
            yield from child.modules()

    def zero_grad(self):
        for m in self.modules():
            for k, v in m.params.items():
                m.grads[k] = np.zeros_like(v)

    def _init_param(self, name, value, dtype):
        self.params[name] = np.asarray(value, dtype=dtype)
        self.grads[name] = np.zeros_like(self.params[name])

    def forward(self, x, training):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


def he_normal(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def _flat_geometry(H, W, k, s, p):
    """Sizes for the flattened-padded-grid convolution.

    Output position (h, w) and tap (i, j) read flat index
    ``i*Wp + j + s*(h*Wp + w)`` of the zero-padded (Hp, Wp) grid. Rows are
    computed over the full padded width ``Wp``; columns ``w >= Wo`` are junk and
    are discarded on output (and held at zero on the way back).
    """
    Hp, Wp = H + 2 * p, W + 2 * p
    Ho, Wo = (Hp - k) // s + 1, (Wp - k) // s + 1
    M = Ho * Wp
    L = max(Hp * Wp, (k - 1) * (Wp + 1) + s * (M - 1) + 1)
    return Hp, Wp, Ho, Wo, M, L


def _to_flat(x, p, L, channel_major):
    """(B, C, H, W) -> zero-padded flat grid, (C, B, L) or (B, C, L)."""
    B, C, H, W = x.shape
    Hp, Wp = H + 2 * p, W + 2 * p
    src = x.transpose(1, 0, 2, 3) if channel_major else x
    out = np.zeros(src.shape[:2] + (L,), dtype=x.dtype)
    out[:, :, :Hp * Wp].reshape(src.shape[:2] + (Hp, Wp))[:, :, p:p + H, p:p + W] = src
    return out


def _from_flat(flat, p, H, W):
    Hp, Wp = H + 2 * p, W + 2 * p
    return flat[:, :, :Hp * Wp].reshape(flat.shape[:2] + (Hp, Wp))[:, :, p:p + H, p:p + W]


class Conv2d(Module):
    """2-D convolution (cross-correlation) via im2col, no bias.

    Three column builders: pointwise (1x1, no padding), a flattened-grid path
    for stride <= 2, and a plain window gather for large strides such as a
    patchifying stem.
    """

    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, rng=None, dtype=np.float64):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.k, self.stride, self.pad = kernel, stride, padding
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_ch * kernel * kernel
        self._init_param("weight", he_normal(rng, (out_ch, in_ch, kernel, kernel), fan_in), dtype)
        self.need_input_grad = True

    def output_hw(self, h, w):
        return ((h + 2 * self.pad - self.k) // self.stride + 1,
                (w + 2 * self.pad - self.k) // self.stride + 1)

    def _wmat(self):
        return self.params["weight"].transpose(0, 2, 3, 1).reshape(self.out_ch, -1)

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(f"conv2d: expected (B,{self.in_ch},H,W) input, got {x.shape}")
        B, C, H, W = x.shape
        k, s, p = self.k, self.stride, self.pad
        Ho, Wo = self.output_hw(H, W)
        if Ho < 1 or Wo < 1:
            raise ShapeError(f"conv2d: input {x.shape} too small for kernel {k}")
        if k == 1 and p == 0:
            mode = "pointwise"
            cols = x[:, :, ::s, ::s].transpose(1, 0, 2, 3).reshape(C, -1)
            width = Wo
        elif s <= 2:
            mode = "flat"
            _, Wp, Ho, Wo, M, L = _flat_geometry(H, W, k, s, p)
            xt = _to_flat(x, p, L, channel_major=True)
            cols = np.empty((k, k, C, B, M), dtype=x.dtype)
            for i in range(k):
                for j in range(k):
                    off = i * Wp + j
                    cols[i, j] = xt[:, :, off:off + s * (M - 1) + 1:s]
            cols = cols.reshape(k * k * C, B * M)
            width = Wp
        else:
            mode = "gather"
            xt = _to_flat(x, p, (H + 2 * p) * (W + 2 * p), channel_major=True)
            xt = xt.reshape(C, B, H + 2 * p, W + 2 * p)
            cols = np.empty((k, k, C, B, Ho, Wo), dtype=x.dtype)
            for i in range(k):
                for j in range(k):
                    cols[i, j] = xt[:, :, i:i + s * Ho:s, j:j + s * Wo:s]
            cols = cols.reshape(k * k * C, B * Ho * Wo)
            width = Wo
        y = (self._wmat() @ cols).reshape(self.out_ch, B, Ho, width)[:, :, :, :Wo]
        self._cache = (mode, cols, x.shape, Ho, Wo, width)
        return np.ascontiguousarray(y.transpose(1, 0, 2, 3))

    def backward(self, dy):
        mode, cols, x_shape, Ho, Wo, width = self._cache
        B, C, H, W = x_shape
        _check_shape("conv2d backward", dy.shape, (B, self.out_ch, Ho, Wo))
        k, s, p = self.k, self.stride, self.pad
        if width == Wo:
            dmat = dy.transpose(1, 0, 2, 3).reshape(self.out_ch, -1)
        else:
            ext = np.zeros((self.out_ch, B, Ho, width), dtype=dy.dtype)
            ext[:, :, :, :Wo] = dy.transpose(1, 0, 2, 3)
            dmat = ext.reshape(self.out_ch, -1)
        dw = (dmat @ cols.T).reshape(self.out_ch, k, k, C)
        self.grads["weight"] += dw.transpose(0, 3, 1, 2)
        if not self.need_input_grad:
            return None
        dcols = self._wmat().T @ dmat
        if mode == "pointwise":
            dx = np.zeros((C, B, H, W), dtype=dy.dtype)
            dx[:, :, ::s, ::s] = dcols.reshape(C, B, Ho, Wo)
        elif mode == "flat":
            _, Wp, _, _, M, L = _flat_geometry(H, W, k, s, p)
            dcols = dcols.reshape(k, k, C, B, M)
            dxt = np.zeros((C, B, L), dtype=dy.dtype)
            for i in range(k):
                for j in range(k):
                    off = i * Wp + j
                    dxt[:, :, off:off + s * (M - 1) + 1:s] += dcols[i, j]
            dx = _from_flat(dxt, p, H, W)
        else:
            dcols = dcols.reshape(k, k, C, B, Ho, Wo)
            dxt = np.zeros((C, B, H + 2 * p, W + 2 * p), dtype=dy.dtype)
            for i in range(k):
                for j in range(k):
                    dxt[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += dcols[i, j]
            dx = dxt[:, :, p:p + H, p:p + W]
        return np.ascontiguousarray(dx.transpose(1, 0, 2, 3))


class DepthwiseConv2d(Module):
    """Per-channel k x k convolution, no bias (flattened-grid taps)."""

    def __init__(self, channels, kernel=3, stride=1, padding=1, rng=None, dtype=np.float64):
        super().__init__()
        self.channels, self.k, self.stride, self.pad = channels, kernel, stride, padding
        rng = rng if rng is not None else np.random.default_rng(0)
        self._init_param("weight", he_normal(rng, (channels, kernel, kernel), kernel * kernel), dtype)

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"depthwise_conv2d: expected (B,{self.channels},H,W), got {x.shape}")
        k, s, p = self.k, self.stride, self.pad
        B, C, H, W = x.shape
        _, Wp, Ho, Wo, M, L = _flat_geometry(H, W, k, s, p)
        if Ho < 1 or Wo < 1:
            raise ShapeError(f"depthwise_conv2d: input {x.shape} too small for kernel {k}")
        xf = _to_flat(x, p, L, channel_major=False)
        wt = self.params["weight"]
        y = np.zeros((B, C, M), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                off = i * Wp + j
                y += wt[None, :, i, j, None] * xf[:, :, off:off + s * (M - 1) + 1:s]
        self._cache = (xf, x.shape, Ho, Wo, Wp, M)
        return np.ascontiguousarray(y.reshape(B, C, Ho, Wp)[:, :, :, :Wo])

    def backward(self, dy):
        xf, (B, C, H, W), Ho, Wo, Wp, M = self._cache
        k, s, p = self.k, self.stride, self.pad
        _check_shape("depthwise_conv2d backward", dy.shape, (B, C, Ho, Wo))
        ext = np.zeros((B, C, Ho, Wp), dtype=dy.dtype)
        ext[:, :, :, :Wo] = dy
        ext = ext.reshape(B, C, M)
        wt = self.params["weight"]
        dxf = np.zeros_like(xf)
        for i in range(k):
            for j in range(k):
                off = i * Wp + j
                sl = slice(off, off + s * (M - 1) + 1, s)
                self.grads["weight"][:, i, j] += np.einsum("bcm,bcm->c", ext, xf[:, :, sl])
                dxf[:, :, sl] += wt[None, :, i, j, None] * ext
        return np.ascontiguousarray(_from_flat(dxf, p, H, W))


class BatchNorm2d(Module):
    """Per-channel batch normalization with running statistics (momentum 0.1)."""

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float64):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self._init_param("gamma", np.ones(channels), dtype)
        self._init_param("beta", np.zeros(channels), dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"batch_norm: expected (B,{self.channels},H,W), got {x.shape}")
        g = self.params["gamma"][None, :, None, None]
        b = self.params["beta"][None, :, None, None]
        if not training:
            rm = self.buffers["running_mean"][None, :, None, None]
            rv = self.buffers["running_var"][None, :, None, None]
            inv = 1.0 / np.sqrt(rv + self.eps)
            xhat = (x - rm) * inv
            self._cache = (xhat, inv[0, :, 0, 0], False)
            return xhat * g + b
        if x.shape[0] < 2:
            raise ShapeError("batch_norm: training mode needs a batch of at least 2")
        n = x.shape[0] * x.shape[2] * x.shape[3]
        mean = np.einsum("bchw->c", x) / n
        xc = x - mean[None, :, None, None]
        var = np.einsum("bchw,bchw->c", xc, xc) / n
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv[None, :, None, None]
        m = self.momentum
        self.buffers["running_mean"][...] = (1 - m) * self.buffers["running_mean"] + m * mean
        self.buffers["running_var"][...] = (1 - m) * self.buffers["running_var"] + m * var * n / max(n - 1, 1)
        self._cache = (xhat, inv, True)
        return xhat * g + b

    def backward(self, dy):
        g = self.params["gamma"]
        xhat, inv, batch_stats = self._cache
        self.grads["gamma"] += np.einsum("bchw,bchw->c", dy, xhat)
        self.grads["beta"] += np.einsum("bchw->c", dy)
        dxhat = dy * g[None, :, None, None]
        if not batch_stats:
            return dxhat * inv[None, :, None, None]
        n = dy.shape[0] * dy.shape[2] * dy.shape[3]
        m1 = (np.einsum("bchw->c", dxhat) / n)[None, :, None, None]
        m2 = (np.einsum("bchw,bchw->c", dxhat, xhat) / n)[None, :, None, None]
        return (dxhat - m1 - xhat * m2) * inv[None, :, None, None]


class ReLU(Module):
    def forward(self, x, training=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class Sigmoid(Module):
    def forward(self, x, training=False):
        self._y = sigmoid(x)
        return self._y

    def backward(self, dy):
        return dy * self._y * (1.0 - self._y)


class GlobalAvgPool(Module):
    """(B, C, H, W) -> (B, C)."""

    def forward(self, x, training=False):
        if x.ndim != 4:
            raise ShapeError(f"global_avg_pool: expected 4-D input, got {x.shape}")
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        B, C, H, W = self._shape
        _check_shape("global_avg_pool backward", dy.shape, (B, C))
        return np.broadcast_to(dy[:, :, None, None] / (H * W), self._shape).copy()


class AvgPool2d(Module):
    """Non-overlapping k x k average pooling; trailing rows/cols that do not fill a window are dropped."""

    def __init__(self, k=2):
        super().__init__()
        self.k = k

    def forward(self, x, training=False):
        k = self.k
        B, C, H, W = x.shape
        Ho, Wo = H // k, W // k
        if Ho < 1 or Wo < 1:
            raise ShapeError(f"avg_pool: input {x.shape} smaller than window {k}")
        self._shape = x.shape
        return x[:, :, :Ho * k, :Wo * k].reshape(B, C, Ho, k, Wo, k).mean(axis=(3, 5))

    def backward(self, dy):
        k = self.k
        B, C, H, W = self._shape
        Ho, Wo = H // k, W // k
        dx = np.zeros(self._shape, dtype=dy.dtype)
        dx[:, :, :Ho * k, :Wo * k] = np.repeat(np.repeat(dy, k, axis=2), k, axis=3) / (k * k)
        return dx


class Linear(Module):
    """Fully connected layer: (B, in) -> (B, out)."""

    def __init__(self, in_features, out_features, rng=None, dtype=np.float64):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        self._init_param("weight", he_normal(rng, (out_features, in_features), in_features), dtype)
        self._init_param("bias", np.zeros(out_features), dtype)

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"fully_connected: expected (B,{self.in_features}), got {x.shape}")
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, dy):
        self.grads["weight"] += dy.T @ self._x
        self.grads["bias"] += dy.sum(axis=0)
        return dy @ self.params["weight"]


class Dropout(Module):
    """Inverted dropout; identity in eval mode. Masks come from ``self.rng``."""

    def __init__(self, p, rng=None):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x, training=False):
        if not training or self.p == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.p
        self._mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


class Softmax(Module):
    """Row-wise softmax over the last axis."""

    def forward(self, x, training=False):
        self._y = softmax(x)
        return self._y

    def backward(self, dy):
        y = self._y
        return y * (dy - (dy * y).sum(axis=-1, keepdims=True))
