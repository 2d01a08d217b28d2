"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(f: Callable[[], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        fp = f()
        x[i] = old - step
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2.0 * step)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise ``|a-b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a), np.asarray(b)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def finite_diff_check(f: Callable[[], Tensor], params: Mapping[str, Tensor],
                      step: float = 1e-5, floor: float = 1e-6) -> dict[str, float]:
    """Compare backprop gradients of scalar ``f()`` with central differences.

    Returns the max relative error per parameter name. ``f`` must rebuild the
    graph from the current parameter values each call.
    """
    for p in params.values():
        p.grad = None
    loss = f()
    backward(loss)
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for k, p in params.items()}
    report = {}
    for k, p in params.items():
        num = numeric_grad(lambda: float(f().data), p.data, step)
        report[k] = relative_error(analytic[k], num, floor)
    return report
