"""Arithmetic operation counts and energy-saving ratios.

Two Hadamard cost models coexist and are never mixed:

* ``hadamard_counts`` is the closed form for three naive (matrix) 2D
  transforms plus the element-wise product, and underlies
  ``ratio_single_channel``.
* ``fast_hadamard_counts`` / ``measured_counts`` describe the butterfly
  implementation actually used by the layers (N^2 log2 N additions per 1D
  pass), which is what the log-squared terms of ``ratio_multi_channel``
  assume.

Logarithms are base 2 throughout.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from itertools import product
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .tensor import Tensor
from .transforms import OpCounter, fwht_1d, hadamard_conv2d, is_power_of_two

CSV_COLUMNS = ("mode", "N", "F", "alpha", "c_in", "ratio", "baseline")


@dataclass(frozen=True)
class CostModel:
    """Energy per multiplication and per addition, in pJ."""

    e_mult: float
    e_add: float
    precision: str = "custom"
    alpha_override: Optional[float] = None

    def __post_init__(self):
        if self.e_mult <= 0 or self.e_add <= 0:
            raise ConfigurationError(f"energies must be positive, got E_m={self.e_mult}, E_a={self.e_add}")

    @property
    def alpha(self) -> float:
        return self.alpha_override if self.alpha_override is not None else self.e_mult / self.e_add

    def energy(self, counts: "OpCounts") -> float:
        return counts.mults * self.e_mult + counts.adds * self.e_add


# alpha is pinned to its rounded value; the pJ figures agree with it to 2 decimals
FP16 = CostModel(e_mult=1.1, e_add=0.45, precision="fp16", alpha_override=2.44)
FP32 = CostModel(e_mult=4.5, e_add=1.0, precision="fp32", alpha_override=4.5)
PRESETS = {"fp16": FP16, "fp32": FP32}


def preset(name: str) -> CostModel:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown precision preset {name!r}; expected one of {tuple(PRESETS)}") from None


@dataclass(frozen=True)
class OpCounts:
    mults: int
    adds: int
    method: str

    def __post_init__(self):
        if self.mults < 0 or self.adds < 0:
            raise ConfigurationError(f"operation counts must be non-negative: {self}")

    def energy(self, model: CostModel) -> float:
        return model.energy(self)

    def with_backprop(self) -> "OpCounts":
        """Forward plus back-propagation, taken as twice the forward work."""
        return OpCounts(3 * self.mults, 3 * self.adds, self.method + "+backprop")


def _log2(n) -> float:
    return math.log2(n)


def conv_counts(n: int, f: int) -> OpCounts:
    """Direct convolution of an N x N single-channel input with an F x F kernel."""
    if not 1 <= f <= n:
        raise ConfigurationError(f"kernel size must satisfy 1 <= F <= N, got F={f}, N={n}")
    return OpCounts(n * n * f * f, n * n * (f * f - 1), "conv")


def fft_counts(n: int) -> OpCounts:
    if n < 2:
        raise ConfigurationError(f"N must be >= 2, got {n}")
    mults = 3 * n * n * _log2(n * n) + 4 * n * n
    adds = 3 * n * n * (n * n - 1) + 2 * n * n
    return OpCounts(int(round(mults)), adds, "fft")


def hadamard_counts(n: int) -> OpCounts:
    if n < 2:
        raise ConfigurationError(f"N must be >= 2, got {n}")
    return OpCounts(n * n, 3 * n * n * (n * n - 1), "hadamard")


def fast_hadamard_counts(n: int, in_channels: int = 1, out_features: int = 1) -> OpCounts:
    """Butterfly implementation: input, kernel and inverse 2D transforms, products, channel sums, 1/N^2 scaling.

    Kernel transforms are counted once per (output, input) pair, the input
    transform once per channel, the inverse once per output feature.
    """
    if not is_power_of_two(n) or n < 2:
        raise ConfigurationError(f"N must be a power of two >= 2, got {n}")
    per_2d = 2 * n * n * int(_log2(n))
    transforms = in_channels + out_features * in_channels + out_features
    adds = transforms * per_2d + out_features * (in_channels - 1) * n * n
    mults = out_features * in_channels * n * n + out_features * n * n
    return OpCounts(mults, adds, "hadamard-fast")


def ratio_single_channel(n, f, alpha) -> float:
    """Convolution energy over Hadamard-method energy; > 1 means the Hadamard method is cheaper."""
    return (f * f * alpha + (f * f - 1)) / (alpha + 3 * (n * n - 1))


def ratio_multi_channel(n, f, alpha, c_in) -> float:
    """Multi-channel saving ``F^2 (a+1) C / (C (a + 1 + 2 log^2 N) + log^2 N)``."""
    if c_in < 1 or n < 2:
        raise ConfigurationError(f"need C_in >= 1 and N >= 2, got C_in={c_in}, N={n}")
    log_sq = _log2(n) ** 2
    return f * f * (alpha + 1) * c_in / (c_in * (alpha + 1 + 2 * log_sq) + log_sq)


def ratio_from_counts(n: int, f: int, model: CostModel) -> float:
    """Single-channel ratio assembled from the operation counts of both methods."""
    e_add = 1.0
    e_mult = model.alpha * e_add
    conv, had = conv_counts(n, f), hadamard_counts(n)
    return (conv.mults * e_mult + conv.adds * e_add) / (had.mults * e_mult + had.adds * e_add)


def sweep(mode: str, n_values: Iterable[int], f_values: Iterable[int], alphas: Iterable[float],
          c_ins: Iterable[int] = ()) -> list[dict]:
    """Evaluate the saving ratio over the Cartesian product of the given ranges."""
    n_values, f_values, alphas = list(n_values), list(f_values), list(alphas)
    c_ins = list(c_ins)
    if mode not in ("single", "multi"):
        raise ConfigurationError(f"mode must be 'single' or 'multi', got {mode!r}")
    if not n_values or not f_values or not alphas or (mode == "multi" and not c_ins):
        raise ConfigurationError("sweep ranges must be non-empty")
    rows = []
    if mode == "single":
        for n, f, a in product(n_values, f_values, alphas):
            rows.append({"mode": mode, "N": n, "F": f, "alpha": a, "c_in": None,
                         "ratio": ratio_single_channel(n, f, a), "baseline": 1.0})
    else:
        for n, f, a, c in product(n_values, f_values, alphas, c_ins):
            rows.append({"mode": mode, "N": n, "F": f, "alpha": a, "c_in": c,
                         "ratio": ratio_multi_channel(n, f, a, c), "baseline": 1.0})
    return rows


def sweep_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(["" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k])
                         for k in CSV_COLUMNS])
    return buf.getvalue()


def read_sweep_csv(text: str) -> list[dict]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append({"mode": rec["mode"], "N": int(rec["N"]), "F": int(rec["F"]), "alpha": float(rec["alpha"]),
                     "c_in": int(rec["c_in"]) if rec["c_in"] else None, "ratio": float(rec["ratio"]),
                     "baseline": float(rec["baseline"])})
    return rows


def measured_counts(order: int, in_channels: int = 1, out_features: int = 1, batch: int = 1,
                    include_output_sum: bool = False, seed: int = 0) -> OpCounts:
    """Run the fused Hadamard-method forward with instrumentation and report its tallies.

    With ``include_output_sum`` the uncropped N x N outputs are also reduced
    to one scalar per (sample, feature), adding N^2 - 1 additions each.
    """
    if not is_power_of_two(order) or order < 2:
        raise ConfigurationError(f"order must be a power of two >= 2, got {order}")
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((batch, in_channels, order, order)))
    k = Tensor(rng.standard_normal((out_features, in_channels, order, order)))
    counter = OpCounter()
    hadamard_conv2d(x, k, order, counter)
    if include_output_sum:
        counter.adds += batch * out_features * (order * order - 1)
    return OpCounts(counter.mults, counter.adds, "hadamard-measured")


def measured_fwht_counts(n: int) -> OpCounts:
    counter = OpCounter()
    fwht_1d(np.zeros(n), counter)
    return OpCounts(counter.mults, counter.adds, "fwht-measured")
