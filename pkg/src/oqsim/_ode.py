"""Adaptive Runge-Kutta driver shared by the deterministic solvers."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import IntegrationError, ValidationError

RTOL = 1e-9
ATOL = 1e-12


def check_grid(t_grid: Sequence[float], start: float | None = 0.0) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValidationError("time grid must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(t)):
        raise ValidationError("time grid contains non-finite values")
    if np.any(np.diff(t) <= 0):
        raise ValidationError("time grid must be strictly ascending")
    if start is not None and t[0] != start:
        raise ValidationError(f"time grid must start at {start}, got {t[0]}")
    return t


def integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t_grid: np.ndarray,
    rtol: float = RTOL,
    atol: float = ATOL,
    max_step: float = np.inf,
) -> np.ndarray:
    """Dormand-Prince 5(4) integration of a complex ODE, sampled on ``t_grid``.

    Returns an array of shape ``(len(t_grid),) + y0.shape``.
    """
    y0 = np.asarray(y0, dtype=complex)
    shape = y0.shape
    if t_grid.size == 1:
        return y0[None].copy()

    def f(t, y):
        return rhs(t, y.reshape(shape)).reshape(-1)

    sol = solve_ivp(
        f, (t_grid[0], t_grid[-1]), y0.reshape(-1), method="RK45",
        t_eval=t_grid, rtol=rtol, atol=atol, max_step=max_step,
    )
    if not sol.success or sol.y.shape[1] != t_grid.size:
        raise IntegrationError(
            f"integration failed on [{t_grid[0]}, {t_grid[-1]}] after {sol.nfev} evaluations "
            f"(rtol={rtol}, atol={atol}): {sol.message}"
        )
    out = sol.y.T.reshape((t_grid.size,) + shape)
    out[0] = y0
    return out
