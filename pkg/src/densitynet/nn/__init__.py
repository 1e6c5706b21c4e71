from .blocks import DenseBlock, InvertedBottleneck, ResidualBlock, SEBlock, Sequential, Transition
from .layers import (
    AvgPool2d,
    BatchNorm2d,
    Conv2d,
    DepthwiseConv2d,
    Dropout,
    GlobalAvgPool,
    Linear,
    Module,
    ReLU,
    ShapeError,
    Sigmoid,
    Softmax,
    log_softmax,
    sigmoid,
    softmax,
)
from .model import FAMILIES, Model, ModelSpec, build_model, default_specs, paper_scale_specs

__all__ = [
    "AvgPool2d", "BatchNorm2d", "Conv2d", "DenseBlock", "DepthwiseConv2d", "Dropout", "FAMILIES",
    "GlobalAvgPool", "InvertedBottleneck", "Linear", "Model", "ModelSpec", "Module", "ReLU",
    "ResidualBlock", "SEBlock", "Sequential", "ShapeError", "Sigmoid", "Softmax", "Transition",
    "build_model", "default_specs", "log_softmax", "paper_scale_specs", "sigmoid", "softmax",
]
