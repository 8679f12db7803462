"""Central finite differences for checking analytic gradients and Hessians."""

from __future__ import annotations

import numpy as np


def fd_gradient(f, x, step: float | None = None) -> np.ndarray:
    """Central-difference gradient of a scalar function at x.

    Default step is 1e-5 * (1 + ||x||).
    """
    x = np.asarray(x, dtype=float)
    h = step if step is not None else 1e-5 * (1.0 + np.linalg.norm(x))
    d = x.size
    grad = np.zeros(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        grad[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return grad


def fd_hessian(f, x, step: float | None = None) -> np.ndarray:
    """Central-difference Hessian, symmetrized. Default step 1e-4 * (1 + ||x||)."""
    x = np.asarray(x, dtype=float)
    h = step if step is not None else 1e-4 * (1.0 + np.linalg.norm(x))
    d = x.size
    hess = np.zeros((d, d))
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        hess[i, i] = (f(x + 2 * ei) - 2.0 * f0 + f(x - 2 * ei)) / (4.0 * h * h)
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h
            v = f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            hess[i, j] = hess[j, i] = v / (4.0 * h * h)
    return hess
