"""Partial mean independence testing and the partial generalized measure of
correlation, with learned regressions and sample splitting."""

from __future__ import annotations

__version__ = "0.1.0"

from pmdep.dataset import DataError, Dataset, SplitPlan, load_csv, make_split, permute_w
from pmdep.dist import aggregate, cauchy_combine, chi2_1_sf, normal_quantile, quantile_combine
from pmdep.pgmc import PgmcEstimate, compute_rn, pgmc_estimate, pgmc_with_screening
from pmdep.pmit import (
    CmitResult,
    DegenerateDataError,
    MultiSplitResult,
    PmitResult,
    adaptive_xi,
    cmit_single,
    compute_tn,
    pmit_multi,
    pmit_single,
    sigma2_yz_hat,
)
from pmdep.regress import FixedSpec, GbtSpec, KnnSpec, LinearSpec, fit

__all__ = [
    "__version__",
    "DataError",
    "Dataset",
    "SplitPlan",
    "load_csv",
    "make_split",
    "permute_w",
    "aggregate",
    "cauchy_combine",
    "chi2_1_sf",
    "normal_quantile",
    "quantile_combine",
    "PgmcEstimate",
    "compute_rn",
    "pgmc_estimate",
    "pgmc_with_screening",
    "CmitResult",
    "DegenerateDataError",
    "MultiSplitResult",
    "PmitResult",
    "adaptive_xi",
    "cmit_single",
    "compute_tn",
    "pmit_multi",
    "pmit_single",
    "sigma2_yz_hat",
    "FixedSpec",
    "GbtSpec",
    "KnnSpec",
    "LinearSpec",
    "fit",
]
