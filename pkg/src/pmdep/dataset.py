"""Dataset container, CSV ingestion, seeded splits and W-block permutation."""

from __future__ import annotations

import csv
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "DataError",
    "Dataset",
    "SplitPlan",
    "load_csv",
    "write_csv",
    "make_split",
    "make_balanced_split",
    "permute_w",
    "permute_w_rows",
    "rng_for",
]

MIN_ROWS = 4


class DataError(ValueError):
    """Malformed input data (bad file, unknown column, non-finite cell...)."""


SPLIT_STREAM = 0
PERMUTE_STREAM = 1
DATA_STREAM = 2


def rng_for(seed: int, stream: int = SPLIT_STREAM) -> np.random.Generator:
    """The package-wide seeded generator (PCG64).

    ``stream`` separates uses of the same integer seed, so a split and a W
    permutation drawn with equal seeds are still independent.
    """
    if seed < 0:
        raise ValueError(f"seeds are unsigned, got {seed}")
    entropy = seed if stream == SPLIT_STREAM else [seed, stream]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response ``y`` and covariates ``x`` with the columns partitioned into a
    control block (``z_cols``) and a tested block (``w_cols``).

    Datasets built by :func:`load_csv` and the simulation generators always
    order the columns as (Z, W), but any disjoint partition is accepted.
    """

    y: np.ndarray
    x: np.ndarray
    z_cols: tuple[int, ...]
    w_cols: tuple[int, ...]
    names: tuple[str, ...] = field(default=(), compare=False)
    response_name: str = field(default="y", compare=False)

    def __post_init__(self) -> None:
        y = np.array(self.y, dtype=float)
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim != 1 or x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise DataError(f"shape mismatch: y {y.shape}, x {x.shape}")
        z = tuple(int(c) for c in self.z_cols)
        w = tuple(int(c) for c in self.w_cols)
        p = x.shape[1]
        if set(z) & set(w):
            raise DataError("z_cols and w_cols overlap")
        if sorted(z + w) != list(range(p)):
            raise DataError(f"z_cols and w_cols must partition the {p} columns of x")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
            raise DataError("y and x must be finite")
        names = tuple(self.names) or tuple(f"x{j}" for j in range(p))
        if len(names) != p:
            raise DataError("one name per column of x is required")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "z_cols", z)
        object.__setattr__(self, "w_cols", w)
        object.__setattr__(self, "names", names)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.z_cols == other.z_cols and self.w_cols == other.w_cols
                and np.array_equal(self.y, other.y) and np.array_equal(self.x, other.x))

    __hash__ = None  # type: ignore[assignment]

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def p1(self) -> int:
        return len(self.z_cols)

    @property
    def p2(self) -> int:
        return len(self.w_cols)

    @property
    def z(self) -> np.ndarray:
        return self.x[:, list(self.z_cols)]

    @property
    def w(self) -> np.ndarray:
        return self.x[:, list(self.w_cols)]

    def rows(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(y, z, x)`` restricted to the given rows."""
        x = self.x[idx]
        return self.y[idx], x[:, list(self.z_cols)], x

    def check_size(self) -> None:
        if self.n < MIN_ROWS:
            raise DataError(f"need at least {MIN_ROWS} rows, got {self.n}")


@dataclass(frozen=True)
class SplitPlan:
    d1_idx: np.ndarray
    d2_idx: np.ndarray
    xi: float
    seed: int

    @property
    def n1(self) -> int:
        return len(self.d1_idx)

    @property
    def n2(self) -> int:
        return len(self.d2_idx)


def make_split(n: int, xi: float, seed: int) -> SplitPlan:
    """Shuffle ``0..n-1`` under ``seed``; the first ``floor(xi * n)`` rows
    form the fitting half D1, the rest the evaluation half D2."""
    if not 0.0 < xi < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {xi!r}")
    n1 = math.floor(xi * n)
    if n1 < 1 or n - n1 < 1:
        raise ValueError(f"degenerate split: n={n}, xi={xi} leaves an empty half")
    perm = rng_for(seed).permutation(n)
    return SplitPlan(
        d1_idx=_frozen(perm[:n1].copy()),
        d2_idx=_frozen(perm[n1:].copy()),
        xi=n1 / n,
        seed=seed,
    )


def make_balanced_split(n: int, seed: int) -> SplitPlan:
    """Two halves of ``0..n-1`` under ``seed``; with odd ``n`` D1 gets the
    extra row."""
    if n < 2:
        raise ValueError(f"cannot halve {n} rows")
    n1 = math.ceil(n / 2)
    perm = rng_for(seed).permutation(n)
    return SplitPlan(_frozen(perm[:n1].copy()), _frozen(perm[n1:].copy()), n1 / n, seed)


def permute_w(data: Dataset, seed: int) -> Dataset:
    """Copy of ``data`` with the W rows shuffled jointly by one permutation.

    Z columns and ``y`` are left in place, which breaks any link between W
    and (Z, Y) while keeping the joint law of W.
    """
    return permute_w_rows(data, rng_for(seed, PERMUTE_STREAM).permutation(data.n))


def permute_w_rows(data: Dataset, perm: Sequence[int] | np.ndarray) -> Dataset:
    """Copy of ``data`` whose W row ``i`` is the original W row ``perm[i]``."""
    if data.p2 < 1:
        raise ValueError("permuting W needs at least one W column")
    perm = np.asarray(perm, dtype=int)
    if sorted(perm.tolist()) != list(range(data.n)):
        raise ValueError("perm must be a permutation of the row indices")
    x = data.x.copy()
    w = list(data.w_cols)
    x[:, w] = data.x[perm][:, w]
    return Dataset(data.y, x, data.z_cols, data.w_cols, data.names, data.response_name)


def _parse_cell(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"row {row}, column {col}: non-numeric value {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}, column {col}: non-finite value {text!r}")
    return value


def load_csv(
    path: str | Path,
    response: str,
    z: Sequence[str] = (),
    w: Sequence[str] = (),
) -> Dataset:
    """Read a headed CSV into a :class:`Dataset` ordered (Z block, W block).

    Row numbers in error messages count data rows from 1 (the header is
    row 0).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        records = [r for r in reader if r]

    dupes = sorted({h for h in header if header.count(h) > 1})
    if dupes:
        raise DataError(f"duplicated column names in header: {dupes}")
    z, w = list(z), list(w)
    if not w:
        raise DataError("at least one W column is required")
    wanted = [response, *z, *w]
    repeated = sorted({c for c in wanted if wanted.count(c) > 1})
    if repeated:
        raise DataError(f"columns assigned more than one role: {repeated}")
    missing = [c for c in wanted if c not in header]
    if missing:
        raise DataError(f"unknown column(s): {missing}")

    pos = {h: j for j, h in enumerate(header)}
    cols = [pos[c] for c in wanted]
    values = np.empty((len(records), len(cols)))
    for i, rec in enumerate(records, start=1):
        if len(rec) != len(header):
            raise DataError(f"row {i}: expected {len(header)} fields, got {len(rec)}")
        for k, (name, j) in enumerate(zip(wanted, cols)):
            values[i - 1, k] = _parse_cell(rec[j].strip(), i, name)

    data = Dataset(
        y=values[:, 0],
        x=values[:, 1:],
        z_cols=tuple(range(len(z))),
        w_cols=tuple(range(len(z), len(z) + len(w))),
        names=tuple(z + w),
        response_name=response,
    )
    data.check_size()
    return data


def write_csv(data: Dataset, path: str | Path) -> None:
    """Write ``data`` with the response first, then columns in ``x`` order.

    ``repr`` floats round-trip exactly through :func:`load_csv`.
    """
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow([data.response_name, *data.names])
        for yi, row in zip(data.y, data.x):
            out.writerow([repr(float(yi)), *(repr(float(v)) for v in row)])
