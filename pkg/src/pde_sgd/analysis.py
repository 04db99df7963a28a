"""Oracles for the step-size theory and slope fitting for rate checks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = ["RecursionParams", "recursion_iterate", "rho", "recursion_params_for", "fit_loglog_slope",
           "SlopeFit"]


@dataclass(frozen=True)
class RecursionParams:
    """e_{n+1}^2 = e_n^2 (1 - c1/(n+nu) + c2/(n+nu)^2) + c3/(n+nu)^2."""
    e1_sq: float
    c1: float
    c2: float
    c3: float
    nu: float

    def __post_init__(self):
        if self.e1_sq < 0 or self.c2 < 0 or self.c3 < 0:
            raise ValueError("e1_sq, c2, c3 must be non-negative")
        if self.c1 <= 1:
            raise ValueError("c1 must exceed 1")
        if self.nu + 1 < self.c2 / (self.c1 - 1):
            raise ValueError("need nu + 1 >= c2 / (c1 - 1)")


def recursion_iterate(params: RecursionParams, N: int) -> np.ndarray:
    """e_1^2 .. e_N^2, iterating the recursion with equality."""
    out = np.empty(N)
    e = params.e1_sq
    for n in range(1, N + 1):
        out[n - 1] = e
        s = n + params.nu
        e = e * (1.0 - params.c1 / s + params.c2 / s**2) + params.c3 / s**2
    return out


def recursion_params_for(e1_sq: float, mu: float, theta: float, nu: float, K: float, M: float) -> RecursionParams:
    return RecursionParams(e1_sq, 2 * mu * theta, 2 * theta * K, theta**2 * M + 2 * theta * K, nu)


def rho(e1_sq: float, mu: float, theta: float, nu: float, K: float, M: float) -> float:
    """Constant of the bound E|u^n - u|^2 <= rho / (n + nu)."""
    if 2 * mu * theta <= 1:
        raise ValueError("need 2 mu theta > 1")
    a, b = (1 + nu) * (1 - 2 * mu * theta), 2 * theta * K
    denom = a + b
    # treat cancellation residue at the equality nu as zero
    if denom >= -1e-12 * max(abs(a), abs(b)):
        raise ValueError(f"nu too small: denominator {denom!r} must be negative")
    return max((1 + nu) * e1_sq, -(theta**2 * M + 2 * theta * K) * (1 + nu) / denom)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    intercept: float
    n_points: int

    def __str__(self):
        return f"{self.slope:.4f} +/- {self.stderr:.4f} ({self.n_points} points)"


def fit_loglog_slope(x, y, skip_fraction: float = 0.0) -> SlopeFit:
    """Least-squares slope of log y against log x after dropping a leading fraction."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("x and y differ in length")
    start = int(math.floor(skip_fraction * x.size))
    x, y = x[start:], y[start:]
    if x.size < 3:
        raise ValueError("need at least 3 points in the fit window")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive values")
    res = stats.linregress(np.log(x), np.log(y))
    return SlopeFit(float(res.slope), float(res.stderr), float(res.intercept), int(x.size))
