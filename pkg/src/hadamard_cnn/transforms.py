"""Walsh-Hadamard transforms in natural (Hadamard) order.

The forward 2D transform is unnormalised, ``Y = H X H^T``; the inverse
carries the whole ``1/N^2`` factor. Fast transforms are butterflies that use
only additions and subtractions. Brute-force dyadic and spatial convolution
sums live here as independent oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .tensor import Tensor, record


def is_power_of_two(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n >= 1 and (n & (n - 1)) == 0


def next_power_of_two(n: int) -> int:
    if n < 1:
        raise ConfigurationError(f"size must be positive, got {n}")
    return 1 << (int(n) - 1).bit_length()


def log2_exact(n: int) -> int:
    return int(n).bit_length() - 1


@dataclass
class OpCounter:
    """Tally of arithmetic operations actually performed by a call."""

    mults: int = 0
    adds: int = 0

    def __iadd__(self, other: "OpCounter") -> "OpCounter":
        self.mults += other.mults
        self.adds += other.adds
        return self


def hadamard_matrix(n: int) -> np.ndarray:
    """Hadamard matrix of order ``n`` built by the block recursion from H(2)."""
    if not is_power_of_two(n) or n < 2:
        raise ConfigurationError(f"Hadamard order must be a power of two >= 2, got {n}")
    h = np.array([[1, 1], [1, -1]], dtype=np.int64)
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h


def _fwht_inplace(buf: np.ndarray, axis: int, counter: OpCounter | None) -> None:
    """In-place butterflies along ``axis`` of a C-contiguous array.

    Everything after ``axis`` is folded into one contiguous inner block, so the
    slices touched at every stage are long runs rather than strided scalars.
    """
    n = buf.shape[axis]
    outer = int(np.prod(buf.shape[:axis], dtype=np.int64))
    flat = buf.reshape(outer, n, -1)
    inner = flat.shape[2]
    h = 1
    while h < n:
        v = flat.reshape(outer, n // (2 * h), 2, h * inner)
        top, bottom = v[:, :, 0], v[:, :, 1]
        saved = top.copy()
        top += bottom
        np.subtract(saved, bottom, out=bottom)
        if counter is not None:
            counter.adds += top.size + bottom.size
        h *= 2


def fwht(a: np.ndarray, axis: int = -1, counter: OpCounter | None = None) -> np.ndarray:
    """Unnormalised fast WHT along ``axis`` (applied to every other index).

    Returns a new array; ``a`` is not modified.
    """
    a = np.asarray(a)
    if a.dtype.kind != "f":
        a = a.astype(np.float64)
    n = a.shape[axis]
    if not is_power_of_two(n):
        raise ConfigurationError(f"WHT length must be a power of two, got {n}")
    buf = np.ascontiguousarray(np.moveaxis(a, axis, 0))
    if buf is a or np.shares_memory(buf, a):
        buf = buf.copy()
    _fwht_inplace(buf, 0, counter)
    return np.moveaxis(buf, 0, axis)


def fwht_1d(v, counter: OpCounter | None = None) -> np.ndarray:
    v = np.asarray(v)
    if v.ndim != 1:
        raise ConfigurationError(f"fwht_1d expects a vector, got shape {v.shape}")
    return fwht(v, -1, counter)


def _check_square(x: np.ndarray) -> int:
    if x.ndim < 2 or x.shape[-1] != x.shape[-2] or not is_power_of_two(x.shape[-1]):
        raise ConfigurationError(f"2D WHT needs square power-of-two trailing axes, got {x.shape}")
    return x.shape[-1]


def wht_2d(x, counter: OpCounter | None = None) -> np.ndarray:
    """``H X H^T`` over the last two axes: rows then columns."""
    x = np.asarray(x)
    _check_square(x)
    if x.dtype.kind != "f":
        x = x.astype(np.float64)
    # trailing axes to the front so every butterfly works on contiguous blocks
    buf = np.ascontiguousarray(np.moveaxis(x, (-2, -1), (1, 0)))
    if np.shares_memory(buf, x):
        buf = buf.copy()
    _fwht_inplace(buf, 0, counter)
    _fwht_inplace(buf, 1, counter)
    return np.moveaxis(buf, (1, 0), (-2, -1))


def iwht_2d(y, counter: OpCounter | None = None) -> np.ndarray:
    y = np.asarray(y)
    n = _check_square(y)
    out = wht_2d(y, counter) * (1.0 / (n * n))
    if counter is not None:
        counter.mults += out.size
    return out


def wht_2d_naive(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n = _check_square(x)
    h = hadamard_matrix(n).astype(np.float64)
    return h @ x @ h.T


def iwht_2d_naive(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    n = _check_square(y)
    h = hadamard_matrix(n).astype(np.float64)
    return (h @ y @ h.T) / (n * n)


@dataclass(frozen=True)
class HadamardPlan:
    """Padded transform order for an H x W input and an F x F kernel."""

    height: int
    width: int
    kernel_size: int

    def __post_init__(self):
        if min(self.height, self.width, self.kernel_size) < 1:
            raise ConfigurationError(f"invalid plan sizes {self.height}x{self.width}, F={self.kernel_size}")

    @property
    def order(self) -> int:
        return max(2, next_power_of_two(max(self.height, self.width, self.kernel_size)))

    @property
    def inverse_scale(self) -> float:
        return 1.0 / self.order**2


# ------------------------------------------------------------------ oracles


def dyadic_conv_bruteforce(x, h) -> np.ndarray:
    """``out[k, l] = sum_{m,p} x[m, p] * h[k ^ m, l ^ p]`` by direct summation."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.shape != h.shape or x.ndim != 2 or x.shape[0] != x.shape[1] or not is_power_of_two(x.shape[0]):
        raise DimensionError(f"dyadic convolution needs equal square power-of-two inputs, got {x.shape}, {h.shape}")
    n = x.shape[0]
    xor = np.bitwise_xor.outer(np.arange(n), np.arange(n))
    # shifted[k, m, l, p] = h[k ^ m, l ^ p]; every term of the sum is formed explicitly
    shifted = h[xor[:, :, None, None], xor[None, None, :, :]]
    return np.einsum("mp,kmlp->kl", x, shifted)


def spatial_conv_bruteforce(x, h, mode: str = "full") -> np.ndarray:
    """True 2D convolution ``sum x[m, p] h[k - m, l - p]``, out-of-range terms zero.

    ``mode="full"`` gives (H+F-1) x (W+F-1); ``mode="same"`` returns the
    H x W block aligned with the kernel centre ((F-1)//2 offset).
    """
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.ndim != 2 or h.ndim != 2:
        raise DimensionError(f"spatial convolution needs 2D inputs, got {x.shape}, {h.shape}")
    rows, cols = x.shape
    f, f2 = h.shape
    if f > rows or f2 > cols:
        raise DimensionError(f"kernel {h.shape} is larger than input {x.shape}")
    full = np.zeros((rows + f - 1, cols + f2 - 1))
    for k in range(full.shape[0]):
        for l in range(full.shape[1]):
            total = 0.0
            for m in range(rows):
                for p in range(cols):
                    if 0 <= k - m < f and 0 <= l - p < f2:
                        total += x[m, p] * h[k - m, l - p]
            full[k, l] = total
    if mode == "full":
        return full
    if mode == "same":
        top, left = (f - 1) // 2, (f2 - 1) // 2
        return full[top:top + rows, left:left + cols]
    raise ConfigurationError(f"unknown convolution mode {mode!r}")


# ------------------------------------------------- differentiable primitives


def wht2d(x: Tensor) -> Tensor:
    """Differentiable forward 2D WHT. H is symmetric, so the adjoint is the transform itself."""
    return record(wht_2d(x.data), (x,), lambda g: (wht_2d(g),), "wht2d")


def iwht2d(y: Tensor) -> Tensor:
    n = _check_square(y.data)
    c = 1.0 / (n * n)
    return record(wht_2d(y.data) * c, (y,), lambda g: (wht_2d(g) * c,), "iwht2d")


def spectral_product(xh: Tensor, kh: Tensor) -> Tensor:
    """Per-coefficient products summed over input channels.

    ``out[b, o] = sum_c xh[b, c] * kh[o, c]`` with B x C x N x N inputs and
    O x C x N x N kernels. By linearity of the inverse transform this equals
    summing the per-channel spatial results.
    """
    if xh.data.ndim != 4 or kh.data.ndim != 4 or xh.shape[1] != kh.shape[1] or xh.shape[2:] != kh.shape[2:]:
        raise DimensionError(f"spectral_product: input {xh.shape} does not match kernels {kh.shape}")
    b, c, n, n2 = xh.shape
    o = kh.shape[0]
    # coefficient-major batched matmul: (N*N, B, C) @ (N*N, C, O)
    xm = xh.data.transpose(2, 3, 0, 1).reshape(n * n2, b, c)
    km = kh.data.transpose(2, 3, 1, 0).reshape(n * n2, c, o)
    out = np.matmul(xm, km).reshape(n, n2, b, o).transpose(2, 3, 0, 1)

    def grad_fn(g):
        gm = g.transpose(2, 3, 0, 1).reshape(n * n2, b, o)
        dx = np.matmul(gm, km.transpose(0, 2, 1)).reshape(n, n2, b, c).transpose(2, 3, 0, 1)
        dk = np.matmul(xm.transpose(0, 2, 1), gm).reshape(n, n2, c, o).transpose(3, 2, 0, 1)
        return np.ascontiguousarray(dx), np.ascontiguousarray(dk)

    return record(np.ascontiguousarray(out), (xh, kh), grad_fn, "spectral_product")


def _to_spectral(a: np.ndarray, n: int, counter: OpCounter | None) -> np.ndarray:
    """Zero-pad P x Q x H x W to N x N x P x Q (bottom/right) and transform the leading axes."""
    buf = np.zeros((n, n) + a.shape[:2], dtype=a.dtype)
    buf[: a.shape[2], : a.shape[3]] = a.transpose(2, 3, 0, 1)
    _fwht_inplace(buf, 0, counter)
    _fwht_inplace(buf, 1, counter)
    return buf


def hadamard_conv2d(x: Tensor, kernels: Tensor, order: int | None = None,
                    counter: OpCounter | None = None) -> Tensor:
    """Fused pad -> WHT -> channel-summed product -> inverse WHT -> crop.

    ``x`` is B x C x H x W, ``kernels`` O x C x F x F; the result is
    B x O x H x W, the top-left block of the N x N dyadic convolution.
    Transforms are kept coefficient-major (N x N x batch x channel) so the
    channel mixing is one batched matmul per coefficient.
    """
    if x.data.ndim != 4 or kernels.data.ndim != 4 or x.shape[1] != kernels.shape[1]:
        raise DimensionError(f"hadamard_conv2d: input {x.shape} does not match kernels {kernels.shape}")
    b, c, h, w = x.shape
    o, _, f, f2 = kernels.shape
    n = order or HadamardPlan(h, w, max(f, f2)).order
    if n < max(h, w, f, f2) or not is_power_of_two(n):
        raise DimensionError(f"transform order {n} cannot hold input {h}x{w} and kernel {f}x{f2}")
    scale = 1.0 / (n * n)
    xh = _to_spectral(x.data, n, counter).reshape(n * n, b, c)
    kh = _to_spectral(kernels.data.transpose(1, 0, 2, 3), n, counter).reshape(n * n, c, o)
    yh = np.matmul(xh, kh)
    if counter is not None:
        counter.mults += b * o * c * n * n
        counter.adds += b * o * (c - 1) * n * n
    y = yh.reshape(n, n, b, o)
    _fwht_inplace(y, 0, counter)
    _fwht_inplace(y, 1, counter)
    y *= scale
    if counter is not None:
        counter.mults += y.size
    out = np.ascontiguousarray(y[:h, :w].transpose(2, 3, 0, 1))

    def grad_fn(g):
        gh = _to_spectral(g, n, None)
        gh *= scale
        gh = gh.reshape(n * n, b, o)
        dx = None
        if x.requires_grad:
            dx = np.matmul(gh, kh.transpose(0, 2, 1)).reshape(n, n, b, c)
            _fwht_inplace(dx, 0, None)
            _fwht_inplace(dx, 1, None)
            dx = np.ascontiguousarray(dx[:h, :w].transpose(2, 3, 0, 1))
        dk = np.matmul(xh.transpose(0, 2, 1), gh).reshape(n, n, c, o)
        _fwht_inplace(dk, 0, None)
        _fwht_inplace(dk, 1, None)
        return dx, np.ascontiguousarray(dk[:f, :f2].transpose(3, 2, 0, 1))

    return record(out, (x, kernels), grad_fn, "hadamard_conv2d")
