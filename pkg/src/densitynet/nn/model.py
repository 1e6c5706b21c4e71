"""Mini attention-enhanced architectures and the Model wrapper."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from .blocks import DenseBlock, InvertedBottleneck, ResidualBlock, SEBlock, Sequential, Transition
from .layers import (
    AvgPool2d,
    BatchNorm2d,
    Conv2d,
    Dropout,
    GlobalAvgPool,
    Linear,
    ReLU,
    ShapeError,
    softmax,
)

FAMILIES = ("residual", "dense", "inverted_bottleneck")


@dataclass(frozen=True)
class ModelSpec:
    family: str
    stage_blocks: tuple = (2, 2)
    base_channels: int = 16
    se_reduction: int = 4
    dropout: float = 0.3
    num_classes: int = 2
    input_size: tuple = (128, 256)  # (width, height)
    seed: int = 0
    growth: int = 8
    expansion: int = 4
    stem_kernel: int = 8
    stem_stride: int = 4
    stem_pool: int = 4
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "stage_blocks", tuple(int(b) for b in self.stage_blocks))
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown architecture family {self.family!r}; expected one of {FAMILIES}")
        if self.num_classes != 2:
            raise ValueError("only binary classification (num_classes=2) is supported")
        if not 0.3 <= self.dropout <= 0.5:
            raise ValueError(f"dropout must lie in [0.3, 0.5], got {self.dropout}")
        if not self.stage_blocks or min(self.stage_blocks) < 1:
            raise ValueError(f"stage_blocks must be non-empty positive counts, got {self.stage_blocks}")
        if self.base_channels < 1 or self.se_reduction < 1 or self.growth < 1 or self.expansion < 1:
            raise ValueError("channel counts, growth, expansion and SE reduction must be >= 1")
        if self.stem_stride < 1 or self.stem_kernel < self.stem_stride or self.stem_pool < 1:
            raise ValueError("stem kernel must be >= stem stride >= 1 and stem pool >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def default_specs(input_size=(128, 256), seed=0):
    """The four desk-scale stand-ins for ResNet18, ResNet50, DenseNet121 and EfficientNet-B0."""
    return [
        ModelSpec("residual", (2, 2), 16, dropout=0.3, input_size=input_size, seed=seed, name="residual_small"),
        ModelSpec("residual", (3, 3, 3), 16, dropout=0.3, input_size=input_size, seed=seed + 1, name="residual_deep"),
        ModelSpec("dense", (3, 3), 16, dropout=0.5, growth=8, input_size=input_size, seed=seed + 2, name="dense_small"),
        ModelSpec("inverted_bottleneck", (1, 2), 16, dropout=0.4, expansion=4, input_size=input_size,
                  seed=seed + 3, name="inverted_small"),
    ]


def paper_scale_specs(input_size=(512, 1024), seed=0):
    """Wider and deeper variants for the full 512x1024 working resolution."""
    return [
        ModelSpec("residual", (2, 2, 2, 2), 64, dropout=0.3, input_size=input_size, seed=seed,
                  stem_kernel=8, stem_stride=2, stem_pool=2, name="residual18"),
        ModelSpec("residual", (3, 4, 6, 3), 64, dropout=0.3, input_size=input_size, seed=seed + 1,
                  stem_kernel=8, stem_stride=2, stem_pool=2, name="residual50"),
        ModelSpec("dense", (6, 12, 24, 16), 64, dropout=0.5, growth=32, input_size=input_size, seed=seed + 2,
                  stem_kernel=8, stem_stride=2, stem_pool=2, name="dense121"),
        ModelSpec("inverted_bottleneck", (1, 2, 2, 3, 3, 4, 1), 16, dropout=0.4, expansion=6,
                  input_size=input_size, seed=seed + 3, stem_kernel=4, stem_stride=2, stem_pool=2, name="inverted_b0"),
    ]


def _build_network(spec, rng, dtype):
    pad = (spec.stem_kernel - spec.stem_stride) // 2
    base = spec.base_channels
    stem_conv = Conv2d(1, base, spec.stem_kernel, spec.stem_stride, pad, rng, dtype)
    stem_conv.need_input_grad = False
    layers = [
        ("stem", Sequential(("conv", stem_conv), ("bn", BatchNorm2d(base, dtype=dtype)),
                            ("relu", ReLU()), ("pool", AvgPool2d(spec.stem_pool)))),
    ]
    ch = base
    if spec.family == "residual":
        for s, n in enumerate(spec.stage_blocks):
            out = base * 2 ** s
            for b in range(n):
                stride = 2 if (s > 0 and b == 0) else 1
                layers.append((f"stage{s}.block{b}",
                               ResidualBlock(ch, out, stride, spec.se_reduction, rng, dtype)))
                ch = out
    elif spec.family == "dense":
        for s, n in enumerate(spec.stage_blocks):
            block = DenseBlock(ch, n, spec.growth, rng, dtype)
            layers.append((f"dense{s}", block))
            ch = block.out_channels
            if s < len(spec.stage_blocks) - 1:
                out = max(ch // 2, 1)
                layers.append((f"transition{s}", Transition(ch, out, spec.se_reduction, rng, dtype)))
                ch = out
        layers.append(("final", Sequential(("bn", BatchNorm2d(ch, dtype=dtype)), ("relu", ReLU()))))
    else:
        for s, n in enumerate(spec.stage_blocks):
            out = base * 2 ** s
            for b in range(n):
                stride = 2 if (s > 0 and b == 0) else 1
                layers.append((f"stage{s}.block{b}", InvertedBottleneck(
                    ch, out, stride, spec.expansion, spec.se_reduction, rng, dtype)))
                ch = out
    dropout = Dropout(spec.dropout)
    layers += [
        ("pool", GlobalAvgPool()),
        ("dropout", dropout),
        ("fc", Linear(ch, spec.num_classes, rng, dtype)),
    ]
    return Sequential(*layers), dropout


class Model:
    """A built network plus its spec and mode.

    The mode starts unset; call :meth:`train` or :meth:`eval` before ``forward``.
    """

    def __init__(self, spec, dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.net, self._dropout = _build_network(spec, np.random.default_rng(spec.seed), self.dtype)
        self.mode = None

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def reseed_dropout(self, seed):
        self._dropout.rng = np.random.default_rng(seed)

    def se_blocks(self):
        return [m for m in self.net.modules() if isinstance(m, SEBlock)]

    def forward(self, batch):
        if self.mode is None:
            raise RuntimeError("model mode not set; call model.train() or model.eval() first")
        batch = np.asarray(batch)
        if batch.ndim != 4 or batch.shape[1] != 1:
            raise ShapeError(f"expected input of shape (B,1,H,W), got {batch.shape}")
        return self.net.forward(batch.astype(self.dtype, copy=False), self.mode == "train")

    def backward(self, dlogits):
        """Backpropagate a logits gradient; returns fresh parameter gradients by name."""
        self.net.zero_grad()
        self.net.backward(np.asarray(dlogits, dtype=self.dtype))
        return self.gradients()

    def parameters(self):
        return OrderedDict(self.net.named_parameters())

    def gradients(self):
        return OrderedDict(self.net.named_gradients())

    def buffers(self):
        return OrderedDict(self.net.named_buffers())

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters().values()))

    def load_state(self, params, buffers):
        """Copy named arrays into the model in place (shapes must match)."""
        for store, values in ((self.parameters(), params), (self.buffers(), buffers)):
            missing = set(store) - set(values)
            if missing:
                raise KeyError(f"state is missing entries: {sorted(missing)[:5]}")
            for k, arr in store.items():
                v = np.asarray(values[k])
                if v.shape != arr.shape:
                    raise ShapeError(f"{k}: expected shape {arr.shape}, got {v.shape}")
                arr[...] = v

    def predict_proba(self, images, batch_size=64):
        """Softmax probabilities for (N,H,W) or (N,1,H,W) images, evaluated in eval mode."""
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[:, None]
        prev, self.mode = self.mode, "eval"
        try:
            out = [softmax(self.forward(images[i:i + batch_size]).astype(np.float64))
                   for i in range(0, len(images), batch_size)]
        finally:
            self.mode = prev
        return np.concatenate(out) if out else np.zeros((0, 2))


def build_model(spec, dtype=np.float64):
    return Model(spec, dtype)
