"""Central finite-difference derivatives with relative steps.

Steps default to ``rel_step * max(1, |x_i|)``; passing ``scale`` overrides
the per-component magnitude with ``rel_step * scale_i``, which keeps
derivative estimates equivariant under known rescalings of the problem.
"""

from __future__ import annotations

import numpy as np


def _steps(x: np.ndarray, rel_step: float, scale: np.ndarray | None) -> np.ndarray:
    if scale is None:
        return rel_step * np.maximum(1.0, np.abs(x))
    return rel_step * np.asarray(scale, dtype=float)


def central_gradient(
    f, x: np.ndarray, rel_step: float = 1e-5, scale: np.ndarray | None = None
) -> np.ndarray:
    """Central-difference gradient."""
    x = np.asarray(x, dtype=float)
    h = _steps(x, rel_step, scale)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        grad[i] = (f(x + e) - f(x - e)) / (2.0 * h[i])
    return grad


def central_jacobian(
    f, x: np.ndarray, rel_step: float = 1e-5, scale: np.ndarray | None = None
) -> np.ndarray:
    """Jacobian of a vector-valued f by central differences; rows index
    outputs, columns inputs."""
    x = np.asarray(x, dtype=float)
    h = _steps(x, rel_step, scale)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * h[i]))
    return np.column_stack(cols)


def central_hessian(
    f, x: np.ndarray, rel_step: float = 3e-3, scale: np.ndarray | None = None
) -> np.ndarray:
    """Symmetric central-difference Hessian.

    The default step is coarser than for gradients: second differences
    amplify evaluation noise by 1/h^2, so h near the fourth root of machine
    epsilon is appropriate.
    """
    x = np.asarray(x, dtype=float)
    k = x.size
    h = _steps(x, rel_step, scale)
    H = np.empty((k, k))
    f0 = f(x)
    for i in range(k):
        ei = np.zeros_like(x)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / (h[i] ** 2)
        for j in range(i + 1, k):
            ej = np.zeros_like(x)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return H
