"""A small Levenberg-Marquardt solver for robustified least squares.

The objective is ``sum_i c_i * huber(r_i)`` where the residual function
returns both the residuals ``r`` and the per-residual coefficients ``c``
(used to normalise residual families).  Jacobians are central differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np

ResidualFn = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]


def huber(r: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def huber_weight(r: np.ndarray, delta: float) -> np.ndarray:
    """IRLS weight ``huber'(r) / r``."""
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))


def robust_cost(fn: ResidualFn, x: np.ndarray, delta: float) -> float:
    r, c = fn(x)
    if not np.all(np.isfinite(r)):
        return float("inf")
    return float(np.sum(c * huber(r, delta)))


def numeric_jacobian(fn: ResidualFn, x: np.ndarray, step: float = 1e-7) -> np.ndarray:
    cols = []
    for j in range(len(x)):
        dx = np.zeros_like(x)
        dx[j] = step
        rp, _ = fn(x + dx)
        rm, _ = fn(x - dx)
        cols.append((rp - rm) / (2 * step))
    return np.stack(cols, axis=1)


def cost_gradient(fn: ResidualFn, x: np.ndarray, delta: float, step: float = 1e-7) -> np.ndarray:
    """Gradient of the robust cost via the chain rule through the Jacobian."""
    r, c = fn(x)
    J = numeric_jacobian(fn, x, step)
    return J.T @ (c * huber_weight(r, delta) * r)


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool
    gradient_norm: float
    cost_history: List[float] = field(default_factory=list)


def levenberg_marquardt(
    fn: ResidualFn,
    x0,
    delta: float = 0.05,
    max_iterations: int = 100,
    gradient_tolerance: float = 1e-6,
    valid: Callable[[np.ndarray], bool] = lambda x: True,
    step: float = 1e-7,
) -> LMResult:
    """Minimise the Huber-robustified cost; only cost-decreasing steps are accepted."""
    x = np.asarray(x0, dtype=float).copy()
    cost = robust_cost(fn, x, delta)
    history = [cost]
    lam = 1e-3
    g = np.zeros_like(x)
    it = 0
    for it in range(1, max_iterations + 1):
        r, c = fn(x)
        J = numeric_jacobian(fn, x, step)
        if not np.all(np.isfinite(J)):
            break  # the model is undefined next to x; report what we have
        w = c * huber_weight(r, delta)
        g = J.T @ (w * r)
        if np.max(np.abs(g)) < gradient_tolerance * 1e-4:
            break
        H = J.T @ (w[:, None] * J)
        diag = np.diag(H).copy()
        diag = np.where(diag > 0, diag, 1e-12)
        improved = False
        while lam < 1e16:
            try:
                dx = -np.linalg.solve(H + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            x_new = x + dx
            new_cost = robust_cost(fn, x_new, delta) if valid(x_new) else float("inf")
            if new_cost < cost:
                improved = True
                small = np.linalg.norm(dx) < 1e-13 * (1 + np.linalg.norm(x))
                flat = cost - new_cost <= 1e-16 * max(cost, 1e-300)
                x, cost = x_new, new_cost
                history.append(cost)
                lam = max(lam / 3, 1e-12)
                break
            lam *= 4
        if not improved or small or flat:
            break
    with np.errstate(invalid="ignore"):
        g = cost_gradient(fn, x, delta, step)
    gnorm = float(np.linalg.norm(g))
    return LMResult(
        x=x,
        cost=cost,
        iterations=it,
        converged=bool(np.isfinite(cost) and gnorm < gradient_tolerance),
        gradient_norm=gnorm,
        cost_history=history,
    )
