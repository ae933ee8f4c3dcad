"""Central finite-difference helpers shared by the gradient tests."""

import numpy as np

from . import tensor as T


def numerical_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences; ``f`` maps an array to a float."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = f(x)
        flat[i] = orig - eps
        minus = f(x)
        flat[i] = orig
        g[i] = (plus - minus) / (2 * eps)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def check_grads(build, inputs: list[np.ndarray], eps: float = 1e-5) -> float:
    """Max relative error between analytic and numerical gradients of ``build``.

    ``build(*tensors)`` returns a scalar Tensor; every input is perturbed in turn.
    """
    tensors = [T.Tensor(a.copy(), requires_grad=True) for a in inputs]
    T.backward(build(*tensors))
    worst = 0.0
    for i, t in enumerate(tensors):
        def f(arr, i=i):
            args = [T.Tensor(arr if j == i else inputs[j]) for j in range(len(inputs))]
            return build(*args).item()
        num = numerical_grad(f, inputs[i].copy(), eps)
        worst = max(worst, rel_error(t.grad, num))
    return worst


def project(out: T.Tensor, weights: np.ndarray) -> T.Tensor:
    """Scalar <out, weights>, used to turn any output into a loss with generic gradient."""
    return T.tensor_sum(T.mul(out, T.Tensor(weights)))
