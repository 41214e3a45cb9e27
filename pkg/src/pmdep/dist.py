"""Tail probabilities and p-value aggregation for multi-split testing."""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

__all__ = [
    "chi2_1_sf",
    "normal_sf",
    "normal_quantile",
    "cauchy_combine",
    "quantile_combine",
    "aggregate",
]

P_CLAMP = 1e-15


def chi2_1_sf(v: float) -> float:
    """Upper tail ``P(chi2_1 > v)``.

    A one-degree-of-freedom chi-square variable is the square of a standard
    normal, so the tail is ``erfc(sqrt(v / 2))``.
    """
    v = float(v)
    if not math.isfinite(v) or v < 0:
        raise ValueError(f"chi2_1_sf needs a finite v >= 0, got {v!r}")
    return math.erfc(math.sqrt(0.5 * v))


def normal_sf(z: float) -> float:
    """``P(N(0, 1) > z)``."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def normal_quantile(alpha: float) -> float:
    """Upper-tail critical value: the ``z`` with ``P(N(0, 1) > z) = alpha``.

    Bracketed Newton iteration on ``normal_sf``; falls back to bisection
    whenever a Newton step would leave the bracket.
    """
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if alpha == 0.5:
        return 0.0
    if alpha > 0.5:
        return -normal_quantile(1.0 - alpha)

    lo, hi = 0.0, 40.0
    # starting point from the logistic-type approximation t - (c0 + c1 t) / (1 + d1 t)
    t = math.sqrt(-2.0 * math.log(alpha))
    z = t - (2.30753 + 0.27061 * t) / (1.0 + 0.99229 * t + 0.04481 * t * t)
    for _ in range(200):
        f = normal_sf(z) - alpha
        if f > 0:
            lo = z
        else:
            hi = z
        dens = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        step = f / dens if dens > 0 else math.inf
        z_new = z + step
        if not lo < z_new < hi:
            z_new = 0.5 * (lo + hi)
        if abs(z_new - z) <= 1e-15 * max(1.0, abs(z)):
            return z_new
        z = z_new
    return z


def _as_pvalues(p: Sequence[float] | np.ndarray) -> np.ndarray:
    arr = np.asarray(p, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("cannot aggregate an empty p-value vector")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
        raise ValueError("p-values must lie in [0, 1]")
    return arr


def cauchy_combine(p: Sequence[float] | np.ndarray) -> float:
    """Cauchy combination of possibly dependent p-values (equal weights)."""
    arr = np.clip(_as_pvalues(p), P_CLAMP, 1.0 - P_CLAMP)
    stat = float(np.mean(np.tan((0.5 - arr) * math.pi)))
    return min(1.0, max(0.0, 0.5 - math.atan(stat) / math.pi))


def quantile_combine(
    p: Sequence[float] | np.ndarray, gamma_min: float = 0.05, grid_size: int = 100
) -> float:
    """Adaptive quantile aggregation over ``gamma`` in ``[gamma_min, 1]``.

    For each ``gamma`` on an equally spaced grid the empirical
    ``gamma``-quantile of ``p / gamma`` is its ``ceil(gamma * B)``-th order
    statistic; the smallest such quantile is inflated by
    ``1 - log(gamma_min)`` and capped at 1.
    """
    if not 0.0 < gamma_min < 1.0:
        raise ValueError(f"gamma_min must lie in (0, 1), got {gamma_min!r}")
    arr = np.sort(_as_pvalues(p))
    b = arr.size
    gammas = np.linspace(gamma_min, 1.0, grid_size)
    # tolerance keeps ceil(gamma * B) from rounding up on representable products
    ranks = np.ceil(gammas * b - 1e-9).astype(int)
    ranks = np.clip(ranks, 1, b)
    q = np.minimum(1.0, arr[ranks - 1] / gammas)
    return float(min(1.0, (1.0 - math.log(gamma_min)) * q.min()))


AGGREGATORS = {"cauchy": cauchy_combine, "quantile": quantile_combine}


def aggregate(p: Sequence[float] | np.ndarray, method: str = "cauchy") -> float:
    try:
        fn = AGGREGATORS[method]
    except KeyError:
        raise ValueError(f"unknown aggregator {method!r}; expected one of {sorted(AGGREGATORS)}") from None
    return fn(p)
