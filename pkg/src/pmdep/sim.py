"""Synthetic scenarios and Monte Carlo drivers.

Scenario families
-----------------
``A1`` / ``A2``
    50 AR(0.3) covariates split 25/25 into Z and W;
    ``Y = Z1 + Z2 + s(theta' W) + eps`` with ``s`` the identity (A1) or the
    square (A2) and ``eps ~ N(0, 0.5^2)``.  ``regime`` picks ``theta``:
    ``null`` (zero), ``sparse`` or ``dense``; in every case
    ``|theta|^2 = 1/2``.
``B1`` / ``B2``
    Independent AR(0.5) blocks Z and W of ``p // 2`` columns each, unit noise;
    ``Y = beta' Z + theta' W + eps`` (B1, first three entries of ``beta`` and
    ``theta`` equal to ``1/sqrt(3)``) or ``Y = Z1 + 2 sin(W1 / 2) + eps``
    (B2).

Every generator is a pure function of its :class:`ScenarioSpec`.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from pmdep.dataset import DATA_STREAM, Dataset, rng_for
from pmdep.pgmc import PgmcEstimate, pgmc_estimate, pgmc_with_screening
from pmdep.pmit import (
    DEFAULT_XI_GRID,
    _map,
    adaptive_xi,
    cmit_single,
    pmit_multi,
    pmit_single,
)
from pmdep.regress import FixedSpec, GbtSpec, RegressorSpec, spec_from_dict, spec_to_dict

__all__ = [
    "FAMILIES",
    "REGIMES",
    "ScenarioSpec",
    "TestMethod",
    "SizePowerResult",
    "CoverageResult",
    "gen_ar_normal",
    "theta_for",
    "gen_a1",
    "gen_a2",
    "gen_b1",
    "gen_b2",
    "generate",
    "oracle_m",
    "oracle_h",
    "population_r2",
    "ar_quadratic_form",
    "run_size_power",
    "run_coverage",
    "run_experiment",
    "load_experiments",
    "write_rows",
]

FAMILIES = ("A1", "A2", "B1", "B2")
REGIMES = ("null", "sparse", "dense")

_DEFAULTS = {
    "A": {"p1": 25, "p2": 25, "rho": 0.3, "noise_sd": 0.5},
    "B": {"p": 100, "rho": 0.5, "noise_sd": 1.0},
}


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulated design.  Unset dimensions and parameters take the
    family defaults; for B-family designs ``p`` is split into ``p // 2``
    Z columns and ``p // 2`` W columns."""

    family: str
    regime: str = "null"
    N: int = 300
    p: int | None = None
    p1: int | None = None
    p2: int | None = None
    rho: float | None = None
    noise_sd: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        fam = self.family.upper()
        if fam not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", fam)
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        defaults = _DEFAULTS[fam[0]]
        if fam[0] == "A":
            p1 = defaults["p1"] if self.p1 is None else self.p1
            p2 = defaults["p2"] if self.p2 is None else self.p2
            if self.p is not None and self.p != p1 + p2:
                raise ValueError("p must equal p1 + p2")
            if p1 < 2 or p2 < 1:
                raise ValueError("A-family designs need p1 >= 2 and p2 >= 1")
        else:
            if self.regime != "null":
                raise ValueError("regime applies to the A family only")
            p = defaults["p"] if self.p is None else self.p
            if p < 6:
                raise ValueError("B-family designs need p >= 6")
            p1 = p2 = p // 2
            if (self.p1 not in (None, p1)) or (self.p2 not in (None, p2)):
                raise ValueError("B-family blocks are fixed at p // 2 columns each")
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "p2", p2)
        object.__setattr__(self, "p", p1 + p2)
        for name in ("rho", "noise_sd"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, defaults[name])
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (-1, 1)")
        if not self.noise_sd > 0.0:
            raise ValueError("noise_sd must be positive")
        if self.N < 1 or self.seed < 0:
            raise ValueError("N must be positive and seed nonnegative")

    def with_seed(self, seed: int) -> ScenarioSpec:
        return replace(self, seed=seed)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def gen_ar_normal(
    N: int, d: int, rho: float, seed: int | np.random.Generator
) -> np.ndarray:
    """``N`` i.i.d. rows of ``N(0, S)`` with ``S_ij = rho^|i-j|``, built one
    column at a time from the previous one."""
    if d < 1:
        raise ValueError("d must be at least 1")
    if not -1.0 < rho < 1.0:
        raise ValueError("rho must lie in (-1, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else rng_for(seed, DATA_STREAM)
    e = rng.standard_normal((N, d))
    out = np.empty_like(e)
    out[:, 0] = e[:, 0]
    c = math.sqrt(1.0 - rho * rho)
    for j in range(1, d):
        out[:, j] = rho * out[:, j - 1] + c * e[:, j]
    return out


def theta_for(spec: ScenarioSpec) -> np.ndarray:
    """W coefficients of the design (all zero under ``null``)."""
    theta = np.zeros(spec.p2)
    if spec.family in ("B1", "B2"):
        if spec.family == "B1":
            theta[:3] = 1.0 / math.sqrt(3.0)
        return theta
    if spec.regime == "null":
        return theta
    if spec.regime == "sparse":
        k = 2 if spec.family == "A1" else 5
    else:
        k = spec.p2 if spec.family == "A1" else spec.p2 // 2
    k = min(k, spec.p2)
    theta[:k] = math.sqrt(0.5 / k)
    return theta


def _names(p1: int, p2: int) -> tuple[str, ...]:
    return tuple(f"z{j + 1}" for j in range(p1)) + tuple(f"w{j + 1}" for j in range(p2))


def _assemble(spec: ScenarioSpec, y: np.ndarray, x: np.ndarray) -> Dataset:
    return Dataset(y, x, tuple(range(spec.p1)), tuple(range(spec.p1, spec.p)),
                   _names(spec.p1, spec.p2))


def _gen_a(spec: ScenarioSpec, link: Callable[[np.ndarray], np.ndarray]) -> Dataset:
    rng = rng_for(spec.seed, DATA_STREAM)
    x = gen_ar_normal(spec.N, spec.p, spec.rho, rng)
    eps = spec.noise_sd * rng.standard_normal(spec.N)
    y = x[:, 0] + x[:, 1] + link(x[:, spec.p1:] @ theta_for(spec)) + eps
    return _assemble(spec, y, x)


def gen_a1(spec: ScenarioSpec) -> Dataset:
    if spec.family != "A1":
        raise ValueError("gen_a1 needs an A1 scenario")
    return _gen_a(spec, lambda u: u)


def gen_a2(spec: ScenarioSpec) -> Dataset:
    if spec.family != "A2":
        raise ValueError("gen_a2 needs an A2 scenario")
    return _gen_a(spec, np.square)


def _gen_b(spec: ScenarioSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = rng_for(spec.seed, DATA_STREAM)
    z = gen_ar_normal(spec.N, spec.p1, spec.rho, rng)
    w = gen_ar_normal(spec.N, spec.p2, spec.rho, rng)
    eps = spec.noise_sd * rng.standard_normal(spec.N)
    return z, w, eps


def gen_b1(spec: ScenarioSpec) -> Dataset:
    if spec.family != "B1":
        raise ValueError("gen_b1 needs a B1 scenario")
    z, w, eps = _gen_b(spec)
    beta = np.zeros(spec.p1)
    beta[:3] = 1.0 / math.sqrt(3.0)
    y = z @ beta + w @ theta_for(spec) + eps
    return _assemble(spec, y, np.hstack([z, w]))


def gen_b2(spec: ScenarioSpec) -> Dataset:
    if spec.family != "B2":
        raise ValueError("gen_b2 needs a B2 scenario")
    z, w, eps = _gen_b(spec)
    y = z[:, 0] + 2.0 * np.sin(w[:, 0] / 2.0) + eps
    return _assemble(spec, y, np.hstack([z, w]))


_GENERATORS = {"A1": gen_a1, "A2": gen_a2, "B1": gen_b1, "B2": gen_b2}


def generate(spec: ScenarioSpec) -> Dataset:
    return _GENERATORS[spec.family](spec)


def oracle_m(spec: ScenarioSpec) -> FixedSpec:
    """True ``E(Y | X)`` of the design, as a fixed regressor on X."""
    theta = theta_for(spec)
    p1 = spec.p1
    if spec.family == "A1":
        f = lambda x: x[:, 0] + x[:, 1] + x[:, p1:] @ theta  # noqa: E731
    elif spec.family == "A2":
        f = lambda x: x[:, 0] + x[:, 1] + (x[:, p1:] @ theta) ** 2  # noqa: E731
    elif spec.family == "B1":
        beta = np.zeros(p1)
        beta[:3] = 1.0 / math.sqrt(3.0)
        f = lambda x: x[:, :p1] @ beta + x[:, p1:] @ theta  # noqa: E731
    else:
        f = lambda x: x[:, 0] + 2.0 * np.sin(x[:, p1] / 2.0)  # noqa: E731
    return FixedSpec(f, name=f"oracle_m_{spec.family}")


def oracle_h(spec: ScenarioSpec) -> FixedSpec:
    """True ``E(Y | Z)`` as a fixed regressor on Z.

    Available for null A-family designs and for the B family, where W is
    independent of Z with mean-zero contributions.
    """
    if spec.family in ("A1", "A2"):
        if spec.regime != "null":
            raise ValueError("E(Y|Z) has no packaged closed form for A-family alternatives")
        f = lambda z: z[:, 0] + z[:, 1]  # noqa: E731
    elif spec.family == "B1":
        beta = np.zeros(spec.p1)
        beta[:3] = 1.0 / math.sqrt(3.0)
        f = lambda z: z @ beta  # noqa: E731
    else:
        f = lambda z: z[:, 0].copy()  # noqa: E731
    return FixedSpec(f, name=f"oracle_h_{spec.family}")


def ar_quadratic_form(theta: np.ndarray, rho: float) -> float:
    """``theta' S theta`` for ``S_ij = rho^|i-j|``."""
    theta = np.asarray(theta, dtype=float)
    idx = np.arange(theta.size)
    cov = rho ** np.abs(idx[:, None] - idx[None, :])
    return float(theta @ cov @ theta)


def population_r2(spec: ScenarioSpec) -> float:
    """Population value of the partial measure of correlation for the B family
    (and 0 for null A-family designs)."""
    if spec.family in ("A1", "A2"):
        if spec.regime == "null":
            return 0.0
        raise ValueError("no closed form packaged for A-family alternatives")
    s2 = spec.noise_sd**2
    if spec.family == "B1":
        signal = ar_quadratic_form(theta_for(spec), spec.rho)
    else:
        # E[(2 sin(W1/2))^2] = 2 (1 - E cos W1) = 2 (1 - exp(-1/2))
        signal = 2.0 * (1.0 - math.exp(-0.5))
    return signal / (signal + s2)


# ---------------------------------------------------------------- drivers


@dataclass(frozen=True)
class TestMethod:
    """How each simulated dataset is tested.

    ``kind`` is ``pmit`` (single split), ``multi`` (``B`` splits combined by
    ``aggregator``) or ``cmit`` (no control block; Z is ignored and
    ``spec_g`` plays the role of the learner for ``E(Y | W)``).

    ``xi=None`` selects the split ratio with :func:`~pmdep.pmit.adaptive_xi`:
    once per replicate (``adaptive="per_replicate"``) or once on a separate
    pilot draw of the scenario, then held fixed (``adaptive="pilot"``).

    ``spec_h="oracle"`` substitutes the scenario's true ``E(Y | Z)``.
    """

    kind: str = "pmit"
    spec_h: RegressorSpec | str = field(default_factory=GbtSpec)
    spec_g: RegressorSpec = field(default_factory=GbtSpec)
    xi: float | None = None
    adaptive: str = "pilot"
    candidates: tuple[float, ...] = DEFAULT_XI_GRID
    M: int = 200
    B: int = 10
    aggregator: str = "cauchy"
    tau: float = 1.0
    g_recipe: str = "residual"
    fast: bool = False
    name: str = ""

    __test__ = False  # not a pytest class

    def __post_init__(self) -> None:
        if self.kind not in ("pmit", "multi", "cmit"):
            raise ValueError(f"unknown test kind {self.kind!r}")
        if self.adaptive not in ("pilot", "per_replicate"):
            raise ValueError("adaptive must be 'pilot' or 'per_replicate'")
        if isinstance(self.spec_h, str) and self.spec_h != "oracle":
            raise ValueError("spec_h must be a regressor spec or 'oracle'")
        if self.kind == "cmit" and self.xi is None:
            raise ValueError("the no-control test needs a fixed xi")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return self.kind if self.kind != "multi" else f"multi-{self.aggregator}"

    def to_dict(self) -> dict[str, Any]:
        h = self.spec_h if isinstance(self.spec_h, str) else spec_to_dict(self.spec_h)
        return {
            "kind": self.kind, "h": h, "g": spec_to_dict(self.spec_g), "xi": self.xi,
            "adaptive": self.adaptive, "candidates": list(self.candidates), "M": self.M,
            "B": self.B, "aggregator": self.aggregator, "tau": self.tau,
            "g_recipe": self.g_recipe, "fast": self.fast, "name": self.name,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, cfg: Mapping[str, Any]) -> TestMethod:
        cfg = dict(cfg)
        cfg.pop("label", None)
        h = cfg.pop("h", {"kind": "gbt"})
        g = cfg.pop("g", {"kind": "gbt"})
        if "candidates" in cfg:
            cfg["candidates"] = tuple(float(c) for c in cfg["candidates"])
        try:
            return cls(spec_h=h if h == "oracle" else spec_from_dict(h),
                       spec_g=spec_from_dict(g), **cfg)
        except TypeError as exc:
            raise ValueError(f"bad method configuration: {exc}") from None


@dataclass(frozen=True)
class SizePowerResult:
    scenario: ScenarioSpec
    method: TestMethod
    reps: int
    alpha: float
    seed: int
    pvalues: tuple[float, ...]
    pvalues_enhanced: tuple[float, ...]
    statistics: tuple[float, ...]
    xis: tuple[float, ...]

    @property
    def rate(self) -> float:
        return float(np.mean(np.asarray(self.pvalues) < self.alpha))

    @property
    def rate_enhanced(self) -> float:
        return float(np.mean(np.asarray(self.pvalues_enhanced) < self.alpha))

    @staticmethod
    def binomial_se(rate: float, reps: int) -> float:
        return math.sqrt(rate * (1.0 - rate) / reps)

    @property
    def se(self) -> float:
        return self.binomial_se(self.rate, self.reps)

    @property
    def se_enhanced(self) -> float:
        return self.binomial_se(self.rate_enhanced, self.reps)

    def row(self) -> dict[str, Any]:
        xis = sorted(set(self.xis))
        return {
            "family": self.scenario.family,
            "regime": self.scenario.regime,
            "N": self.scenario.N,
            "p": self.scenario.p,
            "method": self.method.label,
            "xi": xis[0] if len(xis) == 1 else "varies",
            "reps": self.reps,
            "alpha": self.alpha,
            "rate": self.rate,
            "se": self.se,
            "rate_enhanced": self.rate_enhanced,
            "se_enhanced": self.se_enhanced,
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario.to_dict(),
            "method": self.method.to_dict(),
            "summary": self.row(),
            "pvalues": list(self.pvalues),
            "pvalues_enhanced": list(self.pvalues_enhanced),
            "statistics": list(self.statistics),
            "xis": list(self.xis),
        }


def _resolve_h(method: TestMethod, scenario: ScenarioSpec) -> RegressorSpec:
    return oracle_h(scenario) if method.spec_h == "oracle" else method.spec_h


def _choose_xi(method: TestMethod, data: Dataset, spec_h: RegressorSpec, alpha: float,
               seed: int, threads: int) -> float:
    return adaptive_xi(
        data, spec_h, method.spec_g, candidates=method.candidates, M=method.M, alpha=alpha,
        seed=seed, tau=method.tau, g_recipe=method.g_recipe, fast=method.fast,
        threads=threads,
    ).xi


def run_size_power(
    scenario: ScenarioSpec,
    method: TestMethod,
    reps: int = 200,
    alpha: float = 0.05,
    seed: int = 0,
    threads: int = 1,
) -> SizePowerResult:
    """Empirical rejection rate of ``method`` over ``reps`` scenario draws.

    Replicate ``r`` draws its dataset with seed ``seed + r`` and tests it with
    the same seed.  A pilot draw for ``adaptive="pilot"`` uses seed
    ``seed + reps`` so it never coincides with a replicate.  Results do not
    depend on ``threads``.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    spec_h = _resolve_h(method, scenario)
    fixed_xi = method.xi
    if fixed_xi is None and method.adaptive == "pilot" and method.kind != "cmit":
        pilot = generate(scenario.with_seed(seed + reps))
        fixed_xi = _choose_xi(method, pilot, spec_h, alpha, seed + reps, threads)

    def one(r: int) -> tuple[float, float, float, float]:
        data = generate(scenario.with_seed(seed + r))
        if method.kind == "cmit":
            w_only = Dataset(data.y, data.w, (), tuple(range(data.p2)))
            res = cmit_single(w_only, method.spec_g, method.xi, seed + r)
            return res.p_value, res.p_value, res.v, res.xi
        xi = fixed_xi
        if xi is None:
            xi = _choose_xi(method, data, spec_h, alpha, seed + r, 1)
        if method.kind == "multi":
            multi = pmit_multi(data, spec_h, method.spec_g, xi, method.B, method.aggregator,
                               seed + r, method.tau, method.g_recipe)
            return multi.p_star, multi.p_star_enhanced, float("nan"), xi
        res = pmit_single(data, spec_h, method.spec_g, xi, seed + r, method.tau,
                          method.g_recipe)
        return res.p_value, res.p_value_enhanced, res.v_n, res.xi

    out = _map(one, range(reps), threads)
    return SizePowerResult(
        scenario=scenario,
        method=method,
        reps=reps,
        alpha=alpha,
        seed=seed,
        pvalues=tuple(o[0] for o in out),
        pvalues_enhanced=tuple(o[1] for o in out),
        statistics=tuple(o[2] for o in out),
        xis=tuple(o[3] for o in out),
    )


@dataclass(frozen=True)
class CoverageResult:
    scenario: ScenarioSpec
    reps: int
    alpha: float
    seed: int
    r2_true: float
    estimates: tuple[PgmcEstimate, ...]

    @property
    def cp(self) -> float:
        return float(np.mean([e.covers(self.r2_true) for e in self.estimates]))

    @property
    def al(self) -> float:
        return float(np.mean([e.ci_length for e in self.estimates]))

    @property
    def mean_abs_error(self) -> float:
        return float(np.mean([abs(e.r2_hat - self.r2_true) for e in self.estimates]))

    def row(self) -> dict[str, Any]:
        return {
            "family": self.scenario.family,
            "p": self.scenario.p,
            "N": self.scenario.N,
            "n1": self.estimates[0].n1,
            "reps": self.reps,
            "alpha": self.alpha,
            "r2_true": self.r2_true,
            "CP": self.cp,
            "AL": self.al,
            "mean_abs_error": self.mean_abs_error,
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario.to_dict(),
            "summary": self.row(),
            "estimates": [e.to_dict() for e in self.estimates],
        }


def run_coverage(
    scenario: ScenarioSpec,
    spec_m: RegressorSpec | str,
    spec_h: RegressorSpec | str,
    reps: int = 200,
    alpha: float = 0.05,
    seed: int = 0,
    keep: int | None = None,
    r2_true: float | None = None,
    threads: int = 1,
) -> CoverageResult:
    """Coverage probability and mean length of the pGMC interval.

    ``"oracle"`` in place of a spec substitutes the true regression function.
    ``keep`` switches on per-half distance-correlation screening.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    m = oracle_m(scenario) if spec_m == "oracle" else spec_m
    h = oracle_h(scenario) if spec_h == "oracle" else spec_h
    target = population_r2(scenario) if r2_true is None else r2_true

    def one(r: int) -> PgmcEstimate:
        data = generate(scenario.with_seed(seed + r))
        if keep is None:
            return pgmc_estimate(data, m, h, alpha, seed + r)
        return pgmc_with_screening(data, keep, m, h, alpha, seed + r)

    return CoverageResult(scenario, reps, alpha, seed, target,
                          tuple(_map(one, range(reps), threads)))


# ------------------------------------------------------------ experiments


def _spec_or_oracle(cfg: Any) -> RegressorSpec | str:
    return cfg if cfg == "oracle" else spec_from_dict(cfg)


def run_experiment(cfg: Mapping[str, Any], threads: int = 1) -> SizePowerResult | CoverageResult:
    """Run one experiment described by a plain mapping::

        {"type": "size_power", "scenario": {...}, "method": {...},
         "reps": 200, "alpha": 0.05, "seed": 1}
        {"type": "coverage", "scenario": {...}, "m": {...}, "h": {...},
         "reps": 200, "alpha": 0.05, "seed": 1, "keep": null}
    """
    cfg = dict(cfg)
    kind = cfg.pop("type", "size_power")
    scenario = ScenarioSpec(**cfg.pop("scenario"))
    reps = int(cfg.pop("reps", 200))
    alpha = float(cfg.pop("alpha", 0.05))
    seed = int(cfg.pop("seed", 0))
    if kind == "size_power":
        method = TestMethod.from_dict(cfg.pop("method", {}))
        result: SizePowerResult | CoverageResult = run_size_power(
            scenario, method, reps, alpha, seed, threads)
    elif kind == "coverage":
        result = run_coverage(scenario, _spec_or_oracle(cfg.pop("m", {"kind": "gbt"})),
                              _spec_or_oracle(cfg.pop("h", {"kind": "gbt"})), reps, alpha,
                              seed, cfg.pop("keep", None), cfg.pop("r2_true", None), threads)
    else:
        raise ValueError(f"unknown experiment type {kind!r}")
    if cfg:
        raise ValueError(f"unrecognised experiment keys: {sorted(cfg)}")
    return result


def load_experiments(path: str | Path) -> list[dict[str, Any]]:
    """Read a JSON experiment file: one experiment object, a list of them, or
    ``{"experiments": [...]}``."""
    with Path(path).open(encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, Mapping) and "experiments" in doc:
        doc = doc["experiments"]
    if isinstance(doc, Mapping):
        doc = [doc]
    if not isinstance(doc, list) or not all(isinstance(d, Mapping) for d in doc):
        raise ValueError(f"{path}: expected an experiment object or a list of them")
    return [dict(d) for d in doc]


def write_rows(rows: Sequence[Mapping[str, Any]], path: str | Path | None = None) -> str:
    """Render result rows as CSV (header from the first row); also write them
    to ``path`` when given."""
    import io

    buf = io.StringIO()
    if rows:
        fields = list(rows[0])
        for r in rows[1:]:
            fields += [k for k in r if k not in fields]
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(v) for k, v in r.items()})
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _fmt(v: Any) -> Any:
    return repr(v) if isinstance(v, float) else v
