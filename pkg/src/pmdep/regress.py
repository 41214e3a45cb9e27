"""Conditional-mean regressors and distance-correlation feature screening.

Every learner is described by a small frozen spec object; :func:`fit` turns a
spec plus training data into an immutable :class:`FittedModel`.  The
available kinds are

* :class:`LinearSpec` -- ridge regression with an unpenalized intercept,
* :class:`KnnSpec` -- k-nearest-neighbour averaging (unscaled Euclidean),
* :class:`GbtSpec` -- squared-loss gradient boosted trees (see ``_gbt``),
* :class:`FixedSpec` -- a user-supplied function that ignores the data,
  used to plug true regression functions into the inference layer.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

from pmdep import _gbt

__all__ = [
    "FitError",
    "LinearSpec",
    "KnnSpec",
    "GbtSpec",
    "FixedSpec",
    "RegressorSpec",
    "FittedModel",
    "fit",
    "predict_all",
    "distance_correlation",
    "screen_features",
    "spec_from_dict",
    "spec_to_dict",
]


class FitError(ValueError):
    """Training data a learner cannot be fit on."""


@dataclass(frozen=True)
class LinearSpec:
    """Ridge regression.  ``ridge_lambda=None`` picks
    ``1e-6 * trace(G'G) / d`` on the centered design."""

    ridge_lambda: float | None = None
    kind: str = field(default="linear", init=False)

    def __post_init__(self) -> None:
        if self.ridge_lambda is not None and not self.ridge_lambda >= 0:
            raise ValueError("ridge_lambda must be nonnegative")


@dataclass(frozen=True)
class KnnSpec:
    k: int = 10
    kind: str = field(default="knn", init=False)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be positive")


@dataclass(frozen=True)
class GbtSpec:
    eta: float = 0.1
    nrounds: int = 200
    max_depth: int = 6
    min_leaf: int = 5
    kind: str = field(default="gbt", init=False)

    def __post_init__(self) -> None:
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.nrounds < 0 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("nrounds must be >= 0, max_depth and min_leaf >= 1")


@dataclass(frozen=True)
class FixedSpec:
    """Wraps a known function.  With ``vectorized=True`` (the default) ``f``
    maps an ``(r, d)`` array to ``r`` values; otherwise it is called once per
    feature vector."""

    f: Callable[[np.ndarray], Any]
    vectorized: bool = True
    name: str = "fixed"
    kind: str = field(default="fixed", init=False)


RegressorSpec = Union[LinearSpec, KnnSpec, GbtSpec, FixedSpec]


@dataclass(frozen=True, eq=False)
class FittedModel:
    spec: RegressorSpec
    d: int
    _rows: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    info: Mapping[str, Any] = field(default_factory=dict, repr=False)

    def predict(self, features: np.ndarray) -> float:
        row = np.asarray(features, dtype=float).reshape(1, -1)
        return float(self.predict_all(row)[0])

    def predict_all(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        if x.ndim == 1 and self.d == 0:
            x = x.reshape(-1, 0)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ValueError(f"model expects {self.d} features, got array of shape {x.shape}")
        if x.shape[0] == 0:
            return np.empty(0)
        out = np.asarray(self._rows(x), dtype=float).reshape(-1)
        if out.shape[0] != x.shape[0]:
            raise ValueError("regressor returned the wrong number of predictions")
        return out


def predict_all(model: FittedModel, features: np.ndarray) -> np.ndarray:
    return model.predict_all(features)


def _fit_linear(spec: LinearSpec, x: np.ndarray, t: np.ndarray) -> FittedModel:
    m, d = x.shape
    t_mean = float(t.mean())
    if d == 0:
        return FittedModel(spec, 0, lambda r: np.full(r.shape[0], t_mean))
    x_mean = x.mean(axis=0)
    g = x - x_mean
    gram = g.T @ g
    lam = spec.ridge_lambda
    if lam is None:
        lam = 1e-6 * float(np.trace(gram)) / d
    rhs = g.T @ (t - t_mean)
    try:
        beta = np.linalg.solve(gram + lam * np.eye(d), rhs)
    except np.linalg.LinAlgError:
        beta = np.linalg.lstsq(g, t - t_mean, rcond=None)[0]
    intercept = t_mean - float(x_mean @ beta)
    return FittedModel(spec, d, lambda r: r @ beta + intercept,
                       {"coef": beta, "intercept": intercept, "ridge_lambda": lam})


def _fit_knn(spec: KnnSpec, x: np.ndarray, t: np.ndarray) -> FittedModel:
    m, d = x.shape
    if spec.k > m:
        raise FitError(f"knn needs k <= number of training rows ({spec.k} > {m})")
    train, targets, k = x.copy(), t.copy(), spec.k

    def rows(r: np.ndarray) -> np.ndarray:
        out = np.empty(r.shape[0])
        for start in range(0, r.shape[0], 512):
            block = r[start:start + 512]
            dist = ((block[:, None, :] - train[None, :, :]) ** 2).sum(axis=2)
            nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
            out[start:start + 512] = targets[nearest].mean(axis=1)
        return out

    return FittedModel(spec, d, rows)


def _fit_gbt(spec: GbtSpec, x: np.ndarray, t: np.ndarray) -> FittedModel:
    m, d = x.shape
    base = float(t.mean())
    if d == 0 or spec.nrounds == 0:
        return FittedModel(spec, d, lambda r: np.full(r.shape[0], base),
                           {"train_loss": np.array([float(np.mean((t - base) ** 2))])})
    max_nodes = 2 ** (spec.max_depth + 1) - 1
    shape = (spec.nrounds, max_nodes)
    feature = np.empty(shape, dtype=np.int64)
    threshold = np.empty(shape)
    children = np.empty(shape, dtype=np.int64)
    value = np.empty(shape)
    loss = np.empty(spec.nrounds + 1)
    xc = np.ascontiguousarray(x)
    _gbt.fit_boosted(xc, np.ascontiguousarray(t), spec.eta, spec.nrounds, spec.max_depth,
                     spec.min_leaf, base, feature, threshold, children, value, loss)
    eta = spec.eta

    def rows(r: np.ndarray) -> np.ndarray:
        return _gbt.predict_boosted(np.ascontiguousarray(r), eta, base,
                                    feature, threshold, children, value)

    return FittedModel(spec, d, rows, {"train_loss": loss})


def _fit_fixed(spec: FixedSpec, x: np.ndarray, t: np.ndarray) -> FittedModel:
    f = spec.f
    if spec.vectorized:
        rows = f
    else:
        def rows(r: np.ndarray) -> np.ndarray:
            return np.array([float(f(v)) for v in r])
    return FittedModel(spec, x.shape[1], rows)


_FITTERS = {"linear": _fit_linear, "knn": _fit_knn, "gbt": _fit_gbt, "fixed": _fit_fixed}


def fit(spec: RegressorSpec, features: np.ndarray, targets: np.ndarray) -> FittedModel:
    """Fit ``spec`` to an ``(m, d)`` feature matrix and ``m`` targets."""
    x = np.asarray(features, dtype=float)
    t = np.asarray(targets, dtype=float).reshape(-1)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[0] != t.shape[0]:
        raise FitError(f"{x.shape[0]} feature rows but {t.shape[0]} targets")
    if t.shape[0] < 2:
        raise FitError("need at least 2 training rows")
    if x.shape[1] == 0 and spec.kind not in ("linear", "fixed", "gbt"):
        raise FitError(f"{spec.kind} needs at least one feature")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t))):
        raise FitError("training data contain non-finite values")
    return _FITTERS[spec.kind](spec, x, t)


def _double_centered(v: np.ndarray) -> np.ndarray:
    a = np.abs(v[:, None] - v[None, :])
    return a - a.mean(axis=0, keepdims=True) - a.mean(axis=1, keepdims=True) + a.mean()


def distance_correlation(features: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Empirical distance correlation of each feature column with ``targets``.

    Defined as 0 for a column (or target) with zero distance variance.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    t = np.asarray(targets, dtype=float).reshape(-1)
    b = _double_centered(t)
    var_t = float(np.mean(b * b))
    out = np.zeros(x.shape[1])
    for j in range(x.shape[1]):
        a = _double_centered(x[:, j])
        var_x = float(np.mean(a * a))
        if var_x <= 0.0 or var_t <= 0.0:
            continue
        dcov2 = max(float(np.mean(a * b)), 0.0)
        out[j] = min(1.0, np.sqrt(dcov2 / np.sqrt(var_x * var_t)))
    return out


def screen_features(features: np.ndarray, targets: np.ndarray, keep: int) -> np.ndarray:
    """Indices of the ``keep`` columns most distance-correlated with
    ``targets``; descending, ties going to the lower index."""
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[0] < 4:
        raise FitError("distance-correlation screening needs at least 4 rows")
    if keep < 1:
        raise ValueError("keep must be positive")
    dcor = distance_correlation(x, targets)
    order = np.lexsort((np.arange(dcor.size), -dcor))
    return order[: min(keep, x.shape[1])]


def spec_from_dict(cfg: Mapping[str, Any]) -> RegressorSpec:
    """Build a spec from ``{"kind": ..., <parameters>}`` (config files, CLI)."""
    params = dict(cfg)
    kind = params.pop("kind", None)
    classes = {"linear": LinearSpec, "knn": KnnSpec, "gbt": GbtSpec}
    if kind not in classes:
        raise ValueError(f"unknown regressor kind {kind!r}; expected one of {sorted(classes)}")
    try:
        return classes[kind](**params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {kind}: {exc}") from None


def spec_to_dict(spec: RegressorSpec) -> dict[str, Any]:
    if isinstance(spec, FixedSpec):
        return {"kind": "fixed", "name": spec.name}
    out = {"kind": spec.kind}
    out.update({k: v for k, v in spec.__dict__.items() if k != "kind"})
    return out
