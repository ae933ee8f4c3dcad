"""Dense real tensors with reverse-mode automatic differentiation.

Every differentiable primitive produces its output through :func:`record`,
which attaches the parents and a backward rule when gradients are enabled
and at least one input requires them. :func:`backward` orders the recorded
graph topologically (the tape) and replays the rules in reverse.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, DimensionError

DEFAULT_DTYPE = np.float64

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    """N-dimensional float array that can take part in gradient computation.

    Leaves created with ``requires_grad=True`` own a zero-initialised
    ``grad`` buffer of the same shape; :func:`backward` accumulates into it.
    """

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._op = ""

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.broadcast_to(np.asarray(value, dtype=like.dtype), like.shape).copy())


def record(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of a primitive.

    ``backward_fn(grad_out)`` must return one gradient (or ``None``) per parent.
    """
    out = Tensor(data, dtype=data.dtype)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def tape(root: Tensor) -> list[Tensor]:
    """Recorded nodes reachable from ``root`` in recording (topological) order."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf that ``loss`` depends on."""
    if loss.size != 1:
        raise ConfigurationError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = node.grad + g if node.grad is not None else g.copy()
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return record(a.data @ b.data, (a, b), grad_fn, "matmul")


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    _same_shape(a, b, op)
    if op == "add":
        return record(a.data + b.data, (a, b), lambda g: (g, g), op)
    if op == "sub":
        return record(a.data - b.data, (a, b), lambda g: (g, -g), op)
    if op == "mul":
        return record(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), op)
    raise ConfigurationError(f"unknown elementwise op {op!r}")


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    return record(x.data * c, (x,), lambda g: (g * c,), "scale")


def tensor_sum(x: Tensor) -> Tensor:
    return record(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def reshape(x: Tensor, shape) -> Tensor:
    return record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape B x in."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
        parents = (x, weight, bias)
    else:
        parents = (x, weight)

    def grad_fn(g):
        grads = (g @ weight.data, g.T @ x.data)
        return grads + (g.sum(axis=0),) if bias is not None else grads

    return record(out, parents, grad_fn, "linear")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def max_pool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2 over the last two axes of B x C x H x W."""
    if x.data.ndim != 4:
        raise DimensionError(f"max_pool2 expects B x C x H x W, got {x.shape}")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"max_pool2 needs even spatial sizes, got {h}x{w}")
    d = x.data
    corners = (d[:, :, 0::2, 0::2], d[:, :, 0::2, 1::2], d[:, :, 1::2, 0::2], d[:, :, 1::2, 1::2])
    out = np.maximum(np.maximum(corners[0], corners[1]), np.maximum(corners[2], corners[3]))

    def grad_fn(g):
        dx = np.zeros_like(d)
        # row-major tie-breaking: the first corner equal to the max takes the gradient
        taken = np.zeros(out.shape, dtype=bool)
        for (di, dj), corner in zip(((0, 0), (0, 1), (1, 0), (1, 1)), corners):
            hit = (corner == out) & ~taken
            dx[:, :, di::2, dj::2] = g * hit
            taken |= hit
        return (dx,)

    return record(out, (x,), grad_fn, "max_pool2")


class BatchNormState:
    """Running statistics for one batch-norm layer."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=DEFAULT_DTYPE):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    if x.data.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"batch_norm2d: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    axes = (0, 2, 3)
    bshape = (1, -1, 1, 1)
    if training:
        if x.shape[0] < 2:
            raise ConfigurationError("batch_norm2d in train mode needs a batch of at least 2")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = x.data.size // x.shape[1]
        state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mean
        state.running_var = (1 - state.momentum) * state.running_var + state.momentum * var * m / (m - 1)
    else:
        mean, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def grad_fn(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            dx = inv_std.reshape(bshape) * (
                dxhat
                - dxhat.mean(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
            )
        else:
            dx = dxhat * inv_std.reshape(bshape)
        return dx, dgamma, dbeta

    return record(out.astype(x.dtype, copy=False), (x, gamma, beta), grad_fn, "batch_norm2d")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) at train time."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return record(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``)."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"softmax_cross_entropy: logits {logits.shape}, labels {labels.shape}")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(n)
    loss = -log_probs[rows, labels].mean()

    def grad_fn(g):
        d = np.exp(log_probs)
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return record(np.asarray(loss, dtype=logits.dtype), (logits,), grad_fn, "cross_entropy")


def pad2d(x: Tensor, target) -> Tensor:
    """Append zero rows/columns at the bottom/right up to ``target`` = (H', W')."""
    th, tw = target
    h, w = x.shape[-2:]
    if th < h or tw < w:
        raise DimensionError(f"pad2d: target {th}x{tw} is smaller than input {h}x{w}")
    if (th, tw) == (h, w):
        return x
    out = np.zeros(x.shape[:-2] + (th, tw), dtype=x.dtype)
    out[..., :h, :w] = x.data
    return record(out, (x,), lambda g: (g[..., :h, :w].copy(),), "pad2d")


def crop2d(x: Tensor, target) -> Tensor:
    """Keep the top-left (H', W') block of the last two axes."""
    th, tw = target
    h, w = x.shape[-2:]
    if th > h or tw > w:
        raise DimensionError(f"crop2d: target {th}x{tw} is larger than input {h}x{w}")
    if (th, tw) == (h, w):
        return x

    def grad_fn(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[..., :th, :tw] = g
        return (full,)

    return record(x.data[..., :th, :tw].copy(), (x,), grad_fn, "crop2d")


def conv2d_same(x: Tensor, kernels: Tensor) -> Tensor:
    """Same-size, bias-free cross-correlation: B x C x H x W with O x C x F x F."""
    if x.data.ndim != 4 or kernels.data.ndim != 4 or x.shape[1] != kernels.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} does not match kernels {kernels.shape}")
    b, c, h, w = x.shape
    o, _, f, f2 = kernels.shape
    if f != f2:
        raise DimensionError(f"conv2d: kernels must be square, got {f}x{f2}")
    lo, hi = (f - 1) // 2, f // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (lo, hi), (lo, hi)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (f, f), axis=(2, 3))
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * f * f)
    wmat = kernels.data.reshape(o, c * f * f)
    out = (cols @ wmat.T).reshape(b, h, w, o).transpose(0, 3, 1, 2)

    def grad_fn(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(b * h * w, o)
        dk = (gmat.T @ cols).reshape(kernels.shape)
        dcols = (gmat @ wmat).reshape(b, h, w, c, f, f)
        dxp = np.zeros_like(xp)
        for i in range(f):
            for j in range(f):
                dxp[:, :, i:i + h, j:j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, lo:lo + h, lo:lo + w], dk

    return record(np.ascontiguousarray(out), (x, kernels), grad_fn, "conv2d")
