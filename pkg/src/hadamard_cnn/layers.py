"""Trainable blocks: Hadamard-method feature extraction, convolution, dense."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import BatchNormState, Tensor
from .transforms import HadamardPlan, hadamard_conv2d, iwht2d, spectral_product, wht2d

INIT_MODES = ("normal", "scaled")


def param_init(shape, rng: np.random.Generator, mode: str = "normal", dtype=T.DEFAULT_DTYPE) -> Tensor:
    """Learnable tensor of i.i.d. normal samples.

    ``normal`` draws from N(0, 1). ``scaled`` divides by sqrt(fan_in), with
    fan_in the product of all but the leading dimension.
    """
    if mode not in INIT_MODES:
        raise ConfigurationError(f"unknown init mode {mode!r}; expected one of {INIT_MODES}")
    values = rng.standard_normal(shape)
    if mode == "scaled":
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else 1
        values /= np.sqrt(fan_in)
    return Tensor(values.astype(dtype), requires_grad=True)


class Module:
    training = True

    def parameters(self) -> list[Tensor]:
        return []

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


def hadamard_forward(layer: "HadamardLayer", x: Tensor, fused: bool = True) -> Tensor:
    """Pad, transform, multiply per coefficient summing over channels, inverse, crop.

    ``fused=False`` chains the individual differentiable primitives; both
    paths compute the same values.
    """
    if x.data.ndim != 4 or x.shape[1] != layer.in_channels:
        raise DimensionError(f"HadamardLayer expects B x {layer.in_channels} x H x W, got {x.shape}")
    h, w = x.shape[2:]
    n = HadamardPlan(h, w, layer.kernel_size).order
    if fused:
        return hadamard_conv2d(x, layer.kernels, n)
    xh = wht2d(T.pad2d(x, (n, n)))
    kh = wht2d(T.pad2d(layer.kernels, (n, n)))
    y = iwht2d(spectral_product(xh, kh))
    return T.crop2d(y, (h, w))


def conv_forward(layer: "ConvLayer", x: Tensor) -> Tensor:
    if x.data.ndim != 4 or x.shape[1] != layer.in_channels:
        raise DimensionError(f"ConvLayer expects B x {layer.in_channels} x H x W, got {x.shape}")
    return T.conv2d_same(x, layer.kernels)


def dense_forward(layer: "DenseLayer", x: Tensor) -> Tensor:
    return T.linear(x, layer.weights, layer.bias)


class HadamardLayer(Module):
    """Feature extraction by element-wise products in the WHT domain.

    Kernels are learned in the spatial domain at F x F and zero-padded to the
    plan order on every forward pass, so the parameter count matches a
    bias-free convolution with the same shape.
    """

    def __init__(self, in_channels: int, out_features: int, kernel_size: int, input_size: tuple[int, int],
                 rng: np.random.Generator, init: str = "normal", dtype=T.DEFAULT_DTYPE):
        self.in_channels = in_channels
        self.out_features = out_features
        self.kernel_size = kernel_size
        self.plan = HadamardPlan(input_size[0], input_size[1], kernel_size)
        self.kernels = param_init((out_features, in_channels, kernel_size, kernel_size), rng, init, dtype)

    def parameters(self):
        return [self.kernels]

    def forward(self, x):
        return hadamard_forward(self, x)


class ConvLayer(Module):
    """Same-size cross-correlation without bias."""

    def __init__(self, in_channels: int, out_features: int, kernel_size: int,
                 rng: np.random.Generator, init: str = "normal", dtype=T.DEFAULT_DTYPE):
        self.in_channels = in_channels
        self.out_features = out_features
        self.kernel_size = kernel_size
        self.kernels = param_init((out_features, in_channels, kernel_size, kernel_size), rng, init, dtype)

    def parameters(self):
        return [self.kernels]

    def forward(self, x):
        return conv_forward(self, x)


class DenseLayer(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 init: str = "normal", dtype=T.DEFAULT_DTYPE):
        self.in_features = in_features
        self.out_features = out_features
        self.weights = param_init((out_features, in_features), rng, init, dtype)
        if init == "normal":
            self.bias = param_init((out_features,), rng, "normal", dtype)
        else:
            self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def parameters(self):
        return [self.weights, self.bias]

    def forward(self, x):
        return dense_forward(self, x)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=T.DEFAULT_DTYPE):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.state = BatchNormState(channels, momentum, eps, dtype)

    def parameters(self):
        return [self.gamma, self.beta]

    def forward(self, x):
        return T.batch_norm2d(x, self.gamma, self.beta, self.state, self.training)


class ReLU(Module):
    def forward(self, x):
        return T.relu(x)


class MaxPool2(Module):
    def forward(self, x):
        return T.max_pool2(x)


class Flatten(Module):
    def forward(self, x):
        return T.flatten(x)


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        if not 0.0 <= p < 1.0:
            raise ConfigurationError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def forward(self, x):
        return T.dropout(x, self.p, self.training, self.rng)


class Sequential(Module):
    def __init__(self, *blocks: Module):
        self.blocks = list(blocks)

    def parameters(self):
        return [p for block in self.blocks for p in block.parameters()]

    def named_parameters(self, prefix: str = ""):
        for i, block in enumerate(self.blocks):
            yield from block.named_parameters(f"{prefix}{i}.{type(block).__name__}.")

    def buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, block in enumerate(self.blocks):
            if isinstance(block, BatchNorm2d):
                yield f"{i}.running_mean", block.state.running_mean
                yield f"{i}.running_var", block.state.running_var

    def train(self, mode: bool = True):
        self.training = mode
        for block in self.blocks:
            block.train(mode)
        return self

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x

    def __iter__(self):
        return iter(self.blocks)

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, i) -> Module:
        return self.blocks[i]


def find_layer(model: Sequential, kind: type) -> Optional[Module]:
    return next((b for b in model if isinstance(b, kind)), None)
