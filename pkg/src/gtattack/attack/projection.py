"""Euclidean projection onto the budget polytope {x in [0,1]^k : sum x <= budget}."""

from __future__ import annotations

import numpy as np

__all__ = ["project_budget"]


def project_budget(values: np.ndarray, budget: float, tol: float = 1e-8,
                   max_iter: int = 200) -> np.ndarray:
    """Project onto the box-plus-simplex constraint set.

    If clamping to [0,1] already satisfies the sum, that is the projection;
    otherwise bisection finds the shift mu with sum clamp(x - mu, 0, 1) =
    budget, terminating at |sum - budget| <= tol.
    """
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("project_budget: values must be finite")
    clamped = np.clip(values, 0.0, 1.0)
    if clamped.sum() <= budget + tol:
        return clamped
    lo = float(values.min()) - 1.0
    hi = float(values.max())
    for _ in range(max_iter):
        mu = 0.5 * (lo + hi)
        s = np.clip(values - mu, 0.0, 1.0).sum()
        if abs(s - budget) <= tol:
            break
        if s > budget:
            lo = mu
        else:
            hi = mu
    return np.clip(values - mu, 0.0, 1.0)
