"""Composite blocks: squeeze-and-excitation, residual, dense, inverted bottleneck."""
from __future__ import annotations

import numpy as np

from .layers import (
    AvgPool2d,
    BatchNorm2d,
    Conv2d,
    DepthwiseConv2d,
    GlobalAvgPool,
    Linear,
    Module,
    ReLU,
    ShapeError,
    Sigmoid,
)


class Sequential(Module):
    def __init__(self, *named):
        super().__init__()
        for name, m in named:
            self.add(name, m)

    def forward(self, x, training=False):
        for m in self.children.values():
            x = m.forward(x, training)
        return x

    def backward(self, dy):
        for m in reversed(list(self.children.values())):
            dy = m.backward(dy)
        return dy


def se_hidden(channels, reduction):
    """Bottleneck width C // r, never below one unit."""
    return max(channels // reduction, 1)


class SEBlock(Module):
    """Channel attention: y = x * sigmoid(fc2(relu(fc1(mean_hw(x))))).

    Setting ``bypass`` forces every gate to 1, turning the block into the identity.
    """

    def __init__(self, channels, reduction=4, rng=None, dtype=np.float64):
        super().__init__()
        if reduction < 1 or channels < 1:
            raise ValueError(f"invalid SE block: channels={channels}, reduction={reduction}")
        self.channels = channels
        hidden = se_hidden(channels, reduction)
        self.pool = self.add("pool", GlobalAvgPool())
        self.fc1 = self.add("fc1", Linear(channels, hidden, rng, dtype))
        self.act = self.add("relu", ReLU())
        self.fc2 = self.add("fc2", Linear(hidden, channels, rng, dtype))
        self.gate = self.add("sigmoid", Sigmoid())
        self.bypass = False

    def gates(self, x, training=False):
        s = self.pool.forward(x, training)
        return self.gate.forward(self.fc2.forward(self.act.forward(self.fc1.forward(s), training), training), training)

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"se_block: expected (B,{self.channels},H,W), got {x.shape}")
        if self.bypass:
            return x
        g = self.gates(x, training)
        self._x, self._g = x, g
        return x * g[:, :, None, None]

    def backward(self, dy):
        if self.bypass:
            return dy
        x, g = self._x, self._g
        dg = np.einsum("bchw,bchw->bc", dy, x)
        d = self.gate.backward(dg)
        d = self.fc1.backward(self.act.backward(self.fc2.backward(d)))
        return dy * g[:, :, None, None] + self.pool.backward(d)


class ResidualBlock(Module):
    """conv-bn-relu, conv-bn, add skip, relu, then SE on the block output."""

    def __init__(self, in_ch, out_ch, stride=1, se_reduction=4, rng=None, dtype=np.float64):
        super().__init__()
        self.conv1 = self.add("conv1", Conv2d(in_ch, out_ch, 3, stride, 1, rng, dtype))
        self.bn1 = self.add("bn1", BatchNorm2d(out_ch, dtype=dtype))
        self.relu1 = self.add("relu1", ReLU())
        self.conv2 = self.add("conv2", Conv2d(out_ch, out_ch, 3, 1, 1, rng, dtype))
        self.bn2 = self.add("bn2", BatchNorm2d(out_ch, dtype=dtype))
        self.shortcut = None
        if stride != 1 or in_ch != out_ch:
            self.shortcut = self.add("shortcut", Sequential(
                ("conv", Conv2d(in_ch, out_ch, 1, stride, 0, rng, dtype)),
                ("bn", BatchNorm2d(out_ch, dtype=dtype)),
            ))
        self.relu2 = self.add("relu2", ReLU())
        self.se = self.add("se", SEBlock(out_ch, se_reduction, rng, dtype))

    def forward(self, x, training=False):
        h = self.relu1.forward(self.bn1.forward(self.conv1.forward(x, training), training))
        h = self.bn2.forward(self.conv2.forward(h, training), training)
        skip = x if self.shortcut is None else self.shortcut.forward(x, training)
        return self.se.forward(self.relu2.forward(h + skip), training)

    def backward(self, dy):
        d = self.relu2.backward(self.se.backward(dy))
        dskip = d if self.shortcut is None else self.shortcut.backward(d)
        dh = self.conv2.backward(self.bn2.backward(d))
        dh = self.conv1.backward(self.bn1.backward(self.relu1.backward(dh)))
        return dh + dskip


class DenseLayer(Module):
    """bn-relu-conv3x3 producing ``growth`` channels, concatenated onto the input."""

    def __init__(self, in_ch, growth, rng=None, dtype=np.float64):
        super().__init__()
        self.in_ch = in_ch
        self.body = self.add("body", Sequential(
            ("bn", BatchNorm2d(in_ch, dtype=dtype)),
            ("relu", ReLU()),
            ("conv", Conv2d(in_ch, growth, 3, 1, 1, rng, dtype)),
        ))

    def forward(self, x, training=False):
        return np.concatenate([x, self.body.forward(x, training)], axis=1)

    def backward(self, dy):
        return dy[:, :self.in_ch] + self.body.backward(dy[:, self.in_ch:])


class DenseBlock(Sequential):
    def __init__(self, in_ch, layers, growth, rng=None, dtype=np.float64):
        super().__init__(*[(f"layer{i}", DenseLayer(in_ch + i * growth, growth, rng, dtype))
                           for i in range(layers)])
        self.out_channels = in_ch + layers * growth


class Transition(Sequential):
    """bn-relu-conv1x1, SE attention gate on the compressed maps, 2x2 average pool."""

    def __init__(self, in_ch, out_ch, se_reduction=4, rng=None, dtype=np.float64):
        super().__init__(
            ("bn", BatchNorm2d(in_ch, dtype=dtype)),
            ("relu", ReLU()),
            ("conv", Conv2d(in_ch, out_ch, 1, 1, 0, rng, dtype)),
            ("se", SEBlock(out_ch, se_reduction, rng, dtype)),
            ("pool", AvgPool2d(2)),
        )


class InvertedBottleneck(Module):
    """Expand 1x1, depthwise 3x3, SE, project 1x1; identity skip when shapes allow."""

    def __init__(self, in_ch, out_ch, stride=1, expansion=4, se_reduction=4, rng=None, dtype=np.float64):
        super().__init__()
        mid = in_ch * expansion
        self.body = self.add("body", Sequential(
            ("expand", Conv2d(in_ch, mid, 1, 1, 0, rng, dtype)),
            ("bn0", BatchNorm2d(mid, dtype=dtype)),
            ("relu0", ReLU()),
            ("depthwise", DepthwiseConv2d(mid, 3, stride, 1, rng, dtype)),
            ("bn1", BatchNorm2d(mid, dtype=dtype)),
            ("relu1", ReLU()),
            ("se", SEBlock(mid, se_reduction, rng, dtype)),
            ("project", Conv2d(mid, out_ch, 1, 1, 0, rng, dtype)),
            ("bn2", BatchNorm2d(out_ch, dtype=dtype)),
        ))
        self.residual = stride == 1 and in_ch == out_ch

    def forward(self, x, training=False):
        y = self.body.forward(x, training)
        return x + y if self.residual else y

    def backward(self, dy):
        dx = self.body.backward(dy)
        return dx + dy if self.residual else dx
