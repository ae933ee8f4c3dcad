"""Self-checks runnable from the command line: transform, theorem, gradient and parity suites.

Every suite takes the 2D transform as an argument so a deliberately broken
one can be passed in to prove the suite actually detects faults.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .gradcheck import check_grads, project
from .layers import ConvLayer, DenseLayer, HadamardLayer, conv_forward, dense_forward, hadamard_forward
from .models import ModelSpec, build_model
from .transforms import dyadic_conv_bruteforce, hadamard_matrix, wht_2d, wht_2d_naive

Transform = Callable[[np.ndarray], np.ndarray]

DEFAULT_SIZES = (2, 4, 8, 16, 32, 64)
# the brute-force dyadic sum is O(N^4); larger sizes are skipped by that suite
THEOREM_MAX_SIZE = 16


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.2f}s)"


def flipped_sign_wht(x: np.ndarray) -> np.ndarray:
    """A broken 2D WHT whose matrix has the sign of its last entry flipped."""
    n = x.shape[-1]
    h = hadamard_matrix(n).astype(float)
    h[-1, -1] *= -1
    return h @ x @ h.T


def _inverse(transform: Transform, y: np.ndarray) -> np.ndarray:
    n = y.shape[-1]
    return transform(y) / (n * n)


def involution_suite(sizes: Sequence[int], trials: int = 100, seed: int = 0,
                     transform: Transform = wht_2d) -> SuiteResult:
    """Round trip error, Parseval identity, and fast-vs-matrix agreement."""
    rng = np.random.default_rng(seed)
    worst_inv = worst_parseval = 0.0
    mismatches = 0
    for n in sizes:
        for _ in range(trials):
            x = rng.standard_normal((n, n))
            y = transform(x)
            worst_inv = max(worst_inv, float(np.abs(_inverse(transform, y) - x).max()))
            energy = float((x * x).sum()) * n * n
            worst_parseval = max(worst_parseval, abs(float((y * y).sum()) - energy) / energy)
            # integer-valued inputs keep both paths exact, so they must agree bit for bit
            xi = rng.integers(-1000, 1000, (n, n)).astype(float)
            mismatches += int(not np.array_equal(transform(xi), wht_2d_naive(xi)))
    passed = worst_inv < 1e-9 and worst_parseval < 1e-9 and mismatches == 0
    detail = (f"sizes={list(sizes)} trials={trials} max_roundtrip_err={worst_inv:.2e} "
              f"max_parseval_rel={worst_parseval:.2e} fast_vs_naive_mismatches={mismatches}")
    return SuiteResult("involution", passed, detail)


def convolution_theorem_suite(sizes: Sequence[int], trials: int = 100, seed: int = 0,
                              transform: Transform = wht_2d) -> SuiteResult:
    """Transform-domain product versus the brute-force XOR-indexed sum."""
    rng = np.random.default_rng(seed)
    used = [n for n in sizes if n <= THEOREM_MAX_SIZE]
    worst = 0.0
    for n in used:
        for _ in range(trials):
            x, h = rng.standard_normal((2, n, n))
            fast = _inverse(transform, transform(x) * transform(h))
            worst = max(worst, float(np.abs(fast - dyadic_conv_bruteforce(x, h)).max()))
    passed = bool(used) and worst < 1e-8
    return SuiteResult("convolution-theorem", passed, f"sizes={used} trials={trials} max_abs_err={worst:.2e}")


def _gradient_cases(rng: np.random.Generator):
    """(name, build, inputs) triples for every differentiable layer and loss."""
    had = HadamardLayer(2, 3, 3, (4, 4), rng)
    conv = ConvLayer(2, 3, 3, rng)
    dense = DenseLayer(5, 4, rng)
    w_spatial = rng.standard_normal((2, 3, 4, 4))
    w_dense = rng.standard_normal((3, 4))
    w_bn = rng.standard_normal((4, 2, 3, 3))
    labels = rng.integers(0, 5, 4)
    state = T.BatchNormState(2)

    def hadamard_build(x, k):
        had.kernels = k
        return project(hadamard_forward(had, x), w_spatial)

    def conv_build(x, k):
        conv.kernels = k
        return project(conv_forward(conv, x), w_spatial)

    def dense_build(x, w, b):
        dense.weights, dense.bias = w, b
        return project(dense_forward(dense, x), w_dense)

    def bn_build(x, gamma, beta):
        return project(T.batch_norm2d(x, gamma, beta, state, training=True), w_bn)

    def ce_build(logits):
        return T.softmax_cross_entropy(logits, labels)

    return [
        ("HadamardLayer", hadamard_build, [rng.standard_normal((2, 2, 4, 4)), rng.standard_normal((3, 2, 3, 3))]),
        ("ConvLayer", conv_build, [rng.standard_normal((2, 2, 4, 4)), rng.standard_normal((3, 2, 3, 3))]),
        ("DenseLayer", dense_build, [rng.standard_normal((3, 5)), rng.standard_normal((4, 5)),
                                     rng.standard_normal(4)]),
        ("batch_norm2d", bn_build, [rng.standard_normal((4, 2, 3, 3)), 1 + 0.1 * rng.standard_normal(2),
                                    rng.standard_normal(2)]),
        ("softmax_cross_entropy", ce_build, [rng.standard_normal((4, 5))]),
    ]


def gradient_results(seeds: int = 20) -> dict[str, float]:
    """Worst relative finite-difference error per component over ``seeds`` random instances."""
    worst: dict[str, float] = {}
    for seed in range(seeds):
        for name, build, inputs in _gradient_cases(np.random.default_rng(seed)):
            worst[name] = max(worst.get(name, 0.0), check_grads(build, inputs))
    return worst


def gradient_suite(seeds: int = 20, tolerance: float = 1e-4) -> SuiteResult:
    worst = gradient_results(seeds)
    detail = " ".join(f"{k}={v:.1e}" for k, v in worst.items())
    return SuiteResult("gradient-check", all(v < tolerance for v in worst.values()), f"seeds={seeds} {detail}")


def parity_suite(seed: int = 0, transform: Transform = wht_2d) -> SuiteResult:
    """Equal parameter counts across methods, and layer output versus the naive matrix pipeline."""
    unequal = []
    for dataset, depth, f in itertools.product(("mnist", "cifar10"), (1, 3), (3, 5, 7)):
        counts = [build_model(ModelSpec(dataset, depth, m, f)).num_parameters() for m in ("hadamard", "convolution")]
        if counts[0] != counts[1]:
            unequal.append((dataset, depth, f, counts))
    rng = np.random.default_rng(seed)
    layer = HadamardLayer(2, 3, 3, (6, 6), rng)
    x = rng.standard_normal((2, 2, 6, 6))
    with T.no_grad():
        fast = hadamard_forward(layer, T.Tensor(x)).data
    n = layer.plan.order
    xp = np.zeros((2, 2, n, n))
    xp[..., :6, :6] = x
    kp = np.zeros((3, 2, n, n))
    kp[..., :3, :3] = layer.kernels.data
    xh = np.stack([[transform(c) for c in s] for s in xp])
    kh = np.stack([[transform(c) for c in k] for k in kp])
    prod = np.einsum("bcij,ocij->boij", xh, kh)
    naive = np.stack([[_inverse(transform, p)[:6, :6] for p in s] for s in prod])
    err = float(np.abs(fast - naive).max())
    passed = not unequal and err < 1e-9
    detail = f"configs_with_unequal_counts={len(unequal)} fast_vs_naive_err={err:.2e}"
    return SuiteResult("parity", passed, detail)


def run_all(sizes: Sequence[int] = DEFAULT_SIZES, trials: int = 100, grad_seeds: int = 20,
            transform: Transform = wht_2d) -> list[SuiteResult]:
    suites = [
        lambda: involution_suite(sizes, trials, transform=transform),
        lambda: convolution_theorem_suite(sizes, trials, transform=transform),
        lambda: gradient_suite(grad_seeds),
        lambda: parity_suite(transform=transform),
    ]
    results = []
    for suite in suites:
        start = time.perf_counter()
        result = suite()
        result.seconds = time.perf_counter() - start
        results.append(result)
    return results
