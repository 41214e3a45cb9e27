"""Partial mean independence test via unbalanced sample splitting.

The test asks whether ``E(Y | Z, W) = E(Y | Z)``.  On the fitting half D1 a
learner ``h`` estimates ``E(Y | Z)``; a second learner ``g`` is fit to the
residuals ``Y - h(Z)`` on the full covariates.  On the evaluation half D2 the
statistic compares ``g(X)`` against the D2 mean residual:

    T_n = mean_i (g(X_i) - mean_j (Y_j - h(Z_j)))^2,   i, j in D2
    V_n = n2 * T_n / mean_i (Y_i - h(Z_i))^2

and ``V_n`` is referred to a chi-square(1) law.  The power-enhanced variant
adds ``tau * sum_i g(X_i)^2`` to ``V_n`` and uses the same reference law.

Also here: the no-control-block special case (:func:`cmit_single`), the
permutation search for the split ratio (:func:`adaptive_xi`) and the
multi-split wrapper (:func:`pmit_multi`).
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, TypeVar

import numpy as np

from pmdep.dataset import Dataset, SplitPlan, make_split, permute_w
from pmdep.dist import aggregate, chi2_1_sf
from pmdep.regress import FittedModel, GbtSpec, RegressorSpec, fit

__all__ = [
    "DegenerateDataError",
    "PmitResult",
    "CmitResult",
    "AdaptiveXiResult",
    "MultiSplitResult",
    "DEFAULT_XI_GRID",
    "compute_tn",
    "sigma2_yz_hat",
    "sigma2_y_hat",
    "pmit_single",
    "pmit_on_split",
    "cmit_single",
    "estimated_type1_error",
    "search_xi",
    "adaptive_xi",
    "pmit_multi",
]

log = logging.getLogger(__name__)

DEFAULT_XI_GRID: tuple[float, ...] = tuple((k - 1) / k for k in range(2, 11))
G_RECIPES = ("residual", "difference")

T = TypeVar("T")


class DegenerateDataError(ValueError):
    """Data for which the statistic's normalizer vanishes."""


@dataclass(frozen=True)
class PmitResult:
    t_n: float
    sigma2_yz: float
    v_n: float
    v_n_star: float
    p_value: float
    p_value_enhanced: float
    xi: float
    n1: int
    n2: int
    seed: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class CmitResult:
    t_1n: float
    sigma2_y: float
    v: float
    p_value: float
    xi: float
    n1: int
    n2: int
    seed: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _vector(a: Sequence[float] | np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(a, dtype=float).reshape(-1)
    if v.size == 0:
        raise ValueError(f"{name} is empty")
    return v


def compute_tn(g_hat: Sequence[float] | np.ndarray, resid: Sequence[float] | np.ndarray) -> float:
    """Sample statistic ``mean_i (g_hat_i - mean(resid))^2`` over D2."""
    g = _vector(g_hat, "g_hat")
    r = _vector(resid, "resid")
    if g.shape != r.shape:
        raise ValueError(f"g_hat has {g.size} entries, resid {r.size}")
    return float(np.mean((g - r.mean()) ** 2))


def sigma2_yz_hat(resid: Sequence[float] | np.ndarray) -> float:
    """Uncentered mean square of the D2 residuals ``Y - h(Z)``."""
    r = _vector(resid, "resid")
    s2 = float(np.mean(r * r))
    if s2 <= 0.0:
        raise DegenerateDataError(
            "all residuals Y - h(Z) are zero: the response is fit perfectly by Z (or constant)"
        )
    return s2


def sigma2_y_hat(y: Sequence[float] | np.ndarray) -> float:
    """Full-sample variance of ``y`` with divisor N."""
    v = _vector(y, "y")
    s2 = float(np.mean((v - v.mean()) ** 2))
    if s2 <= 0.0:
        raise DegenerateDataError("the response is constant")
    return s2


def _fit_g(
    data: Dataset,
    split: SplitPlan,
    h_model: FittedModel,
    spec_g: RegressorSpec,
    g_recipe: str,
) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    y1, z1, x1 = data.rows(split.d1_idx)
    if g_recipe == "residual":
        g_model = fit(spec_g, x1, y1 - h_model.predict_all(z1))
        return lambda x, z: g_model.predict_all(x)
    if g_recipe == "difference":
        m_model = fit(spec_g, x1, y1)
        return lambda x, z: m_model.predict_all(x) - h_model.predict_all(z)
    raise ValueError(f"unknown g_recipe {g_recipe!r}; expected one of {G_RECIPES}")


def pmit_on_split(
    data: Dataset,
    split: SplitPlan,
    spec_h: RegressorSpec,
    spec_g: RegressorSpec,
    tau: float = 1.0,
    g_recipe: str = "residual",
    h_model: FittedModel | None = None,
) -> PmitResult:
    """The single-split test on a given split.  A prefit ``h_model`` (trained
    on ``split.d1_idx``) may be passed to skip refitting ``h``."""
    if data.p2 < 1:
        raise ValueError("the tested block W is empty")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    y1, z1, _ = data.rows(split.d1_idx)
    if h_model is None:
        h_model = fit(spec_h, z1, y1)
    g = _fit_g(data, split, h_model, spec_g, g_recipe)

    y2, z2, x2 = data.rows(split.d2_idx)
    resid = y2 - h_model.predict_all(z2)
    g_hat = g(x2, z2)
    t_n = compute_tn(g_hat, resid)
    s2 = sigma2_yz_hat(resid)
    n2 = split.n2
    v_n = n2 * t_n / s2
    v_star = v_n + tau * float(np.sum(g_hat * g_hat))
    return PmitResult(
        t_n=t_n,
        sigma2_yz=s2,
        v_n=v_n,
        v_n_star=v_star,
        p_value=chi2_1_sf(v_n),
        p_value_enhanced=chi2_1_sf(v_star),
        xi=split.xi,
        n1=split.n1,
        n2=n2,
        seed=split.seed,
    )


def pmit_single(
    data: Dataset,
    spec_h: RegressorSpec,
    spec_g: RegressorSpec,
    xi: float,
    seed: int,
    tau: float = 1.0,
    g_recipe: str = "residual",
) -> PmitResult:
    """One split of ``data`` at ratio ``xi`` under ``seed``, then the test.

    ``g_recipe="residual"`` regresses the in-sample D1 residuals ``Y - h(Z)``
    on X; ``"difference"`` fits ``m`` to Y on X (using ``spec_g``) and takes
    ``g = m - h``.
    """
    split = make_split(data.n, xi, seed)
    return pmit_on_split(data, split, spec_h, spec_g, tau, g_recipe)


def cmit_single(data: Dataset, spec_m: RegressorSpec, xi: float, seed: int) -> CmitResult:
    """Overall significance of all covariates for the mean of Y.

    ``m`` is fit on D1 with every column of ``x`` as a feature; the statistic
    centers D2 predictions at the D2 response mean and is normalized by the
    full-sample variance of Y.
    """
    s2 = sigma2_y_hat(data.y)
    split = make_split(data.n, xi, seed)
    y1, _, x1 = data.rows(split.d1_idx)
    y2, _, x2 = data.rows(split.d2_idx)
    m_model = fit(spec_m, x1, y1)
    t1 = float(np.mean((m_model.predict_all(x2) - y2.mean()) ** 2))
    v = split.n2 * t1 / s2
    return CmitResult(t_1n=t1, sigma2_y=s2, v=v, p_value=chi2_1_sf(v),
                      xi=split.xi, n1=split.n1, n2=split.n2, seed=seed)


def _map(fn: Callable[[int], T], items: Iterable[int], threads: int) -> list[T]:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def estimated_type1_error(pvalues: Sequence[float] | np.ndarray, alpha: float) -> float:
    """Fraction of permutation p-values at or below ``alpha``."""
    p = _vector(pvalues, "pvalues")
    return float(np.mean(p <= alpha))


@dataclass(frozen=True)
class AdaptiveXiResult:
    """Outcome of the split-ratio search.

    ``evaluated`` lists ``(xi, rejections, replicates_run)`` for every
    candidate looked at.  With early stopping a failing candidate is
    abandoned as soon as its rejection count guarantees ``Err > alpha``, so
    ``replicates_run`` can be below ``M`` there.  ``flagged`` is set when no
    candidate qualified and the largest was returned.
    """

    xi: float
    err: float
    flagged: bool
    M: int
    alpha: float
    evaluated: tuple[tuple[float, int, int], ...] = field(default=())

    def to_dict(self) -> dict[str, Any]:
        return {
            "xi": self.xi,
            "err": self.err,
            "flagged": self.flagged,
            "M": self.M,
            "alpha": self.alpha,
            "evaluated": [
                {"xi": c, "rejections": r, "replicates": k} for c, r, k in self.evaluated
            ],
        }


def search_xi(
    candidates: Sequence[float],
    M: int,
    alpha: float,
    replicate_pvalues: Callable[[float, Sequence[int]], Sequence[float]],
    stop_early: bool = True,
    chunk: int = 1,
) -> AdaptiveXiResult:
    """Smallest candidate whose estimated type I error is at most ``alpha``.

    ``replicate_pvalues(xi, ms)`` returns the permutation p-values of the
    replicates with indices ``ms``; it is called in chunks of ``chunk``
    indices so callers can evaluate a chunk concurrently.  The scan within a
    chunk is sequential, so the reported counts never depend on ``chunk``.
    """
    cands = [float(c) for c in candidates]
    if not cands:
        raise ValueError("no candidate split ratios")
    if any(not 0.0 < c < 1.0 for c in cands) or cands != sorted(cands):
        raise ValueError("candidates must be ascending values in (0, 1)")
    if M < 1:
        raise ValueError("M must be at least 1")
    # Err <= alpha  <=>  rejections <= floor(alpha * M)
    allowed = math.floor(alpha * M + 1e-12)
    evaluated: list[tuple[float, int, int]] = []
    for xi in cands:
        rejections = 0
        run = 0
        failed = False
        while run < M and not failed:
            ms = list(range(run, min(M, run + max(1, chunk))))
            for p in replicate_pvalues(xi, ms):
                run += 1
                rejections += int(p <= alpha)
                if stop_early and rejections > allowed:
                    failed = True
                    break
        evaluated.append((xi, rejections, run))
        err = rejections / M
        log.debug("xi=%.4f rejections=%d/%d (run %d)", xi, rejections, M, run)
        if rejections <= allowed:
            return AdaptiveXiResult(xi, err, False, M, alpha, tuple(evaluated))
    xi, rejections, _ = evaluated[-1]
    return AdaptiveXiResult(xi, rejections / M, True, M, alpha, tuple(evaluated))


def adaptive_xi(
    data: Dataset,
    spec_h: RegressorSpec,
    spec_g: RegressorSpec,
    candidates: Sequence[float] = DEFAULT_XI_GRID,
    M: int = 200,
    alpha: float = 0.05,
    seed: int = 0,
    tau: float = 1.0,
    g_recipe: str = "residual",
    enhanced: bool = False,
    fast: bool = False,
    stop_early: bool = True,
    threads: int = 1,
) -> AdaptiveXiResult:
    """Choose the split ratio by permutation estimates of the type I error.

    Replicate ``m`` (0-based) shuffles W with seed ``seed + m + 1`` and splits
    with the same integer on the split stream; replicate seeds are shared by
    all candidates.  ``enhanced`` counts rejections of the power-enhanced
    p-value instead of the plain one.

    ``fast=True`` is an approximation: for each candidate a single split
    (seed ``seed``) is drawn and ``h`` is fit once on it; the replicates then
    only reshuffle W and refit ``g``.
    """
    key = "p_value_enhanced" if enhanced else "p_value"
    fast_cache: dict[float, tuple[SplitPlan, FittedModel]] = {}

    def one(xi: float, m: int) -> float:
        permuted = permute_w(data, seed + m + 1)
        if fast:
            if xi not in fast_cache:
                split = make_split(data.n, xi, seed)
                y1, z1, _ = data.rows(split.d1_idx)
                fast_cache[xi] = (split, fit(spec_h, z1, y1))
            split, h_model = fast_cache[xi]
            res = pmit_on_split(permuted, split, spec_h, spec_g, tau, g_recipe, h_model)
        else:
            res = pmit_single(permuted, spec_h, spec_g, xi, seed + m + 1, tau, g_recipe)
        return getattr(res, key)

    def batch(xi: float, ms: Sequence[int]) -> list[float]:
        if fast and xi not in fast_cache:
            one(xi, ms[0])  # populate the cache before fanning out
        return _map(lambda m: one(xi, m), ms, threads)

    return search_xi(candidates, M, alpha, batch, stop_early=stop_early, chunk=max(1, threads))


@dataclass(frozen=True)
class MultiSplitResult:
    """``p_star`` aggregates the plain p-values of the B splits,
    ``p_star_enhanced`` the power-enhanced ones."""

    p_star: float
    p_star_enhanced: float
    aggregator: str
    runs: tuple[PmitResult, ...]

    def reject(self, alpha: float = 0.05, enhanced: bool = False) -> bool:
        return (self.p_star_enhanced if enhanced else self.p_star) < alpha

    def to_dict(self) -> dict[str, Any]:
        return {
            "p_star": self.p_star,
            "p_star_enhanced": self.p_star_enhanced,
            "aggregator": self.aggregator,
            "B": len(self.runs),
            "runs": [r.to_dict() for r in self.runs],
        }


def pmit_multi(
    data: Dataset,
    spec_h: RegressorSpec,
    spec_g: RegressorSpec,
    xi: float,
    B: int = 10,
    aggregator: str = "cauchy",
    seed: int = 0,
    tau: float = 1.0,
    g_recipe: str = "residual",
    threads: int = 1,
) -> MultiSplitResult:
    """``B`` single-split tests with split seeds ``seed + 1 .. seed + B``,
    p-values combined by ``aggregator`` (``"cauchy"`` or ``"quantile"``)."""
    if B < 1:
        raise ValueError("B must be at least 1")
    runs = _map(lambda b: pmit_single(data, spec_h, spec_g, xi, seed + b, tau, g_recipe),
                range(1, B + 1), threads)
    return MultiSplitResult(
        p_star=aggregate([r.p_value for r in runs], aggregator),
        p_star_enhanced=aggregate([r.p_value_enhanced for r in runs], aggregator),
        aggregator=aggregator,
        runs=tuple(runs),
    )


def default_gbt() -> GbtSpec:
    return GbtSpec()
