from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pmdep.dataset import Dataset, SplitPlan, make_balanced_split
from pmdep.dist import normal_quantile
from pmdep.pgmc import compute_rn, pgmc_estimate, pgmc_on_split, pgmc_with_screening
from pmdep.pmit import DegenerateDataError
from pmdep.regress import FixedSpec, GbtSpec, LinearSpec, screen_features
from pmdep.sim import ScenarioSpec, generate, oracle_h, oracle_m

B2_R2 = 2 * (1 - math.exp(-0.5)) / (2 * (1 - math.exp(-0.5)) + 1)


def mixed_data(n: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 5))
    y = x[:, 0] + np.sin(2 * x[:, 3]) + 0.5 * rng.standard_normal(n)
    return Dataset(y, x, (0, 1), (2, 3, 4))


class TestComputeRn:
    def test_examples(self):
        r = np.array([0.3, -1.0, 2.0])
        assert compute_rn(r, r) == 0.0
        assert compute_rn([2, 0], [0, 0]) == 2.0
        assert compute_rn(-r, [1, 1, -1]) == compute_rn(r, [-1, -1, 1])

    def test_can_be_negative(self):
        assert compute_rn([0.1, 0.1], [1.0, 1.0]) < 0

    def test_errors(self):
        with pytest.raises(ValueError):
            compute_rn([1.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            compute_rn([], [])


class TestEstimate:
    def test_identical_fits_give_zero(self):
        data = mixed_data(100, 1)
        same = FixedSpec(lambda r: r[:, 0])
        est = pgmc_estimate(data, same, FixedSpec(lambda z: z[:, 0]), seed=2)
        assert est.rn_star == 0.0 and est.r2_hat == 0.0

    def test_noiseless_gives_one(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((60, 3))
        y = x[:, 0] + x[:, 2] ** 2
        data = Dataset(y, x, (0, 1), (2,))
        m = FixedSpec(lambda r: r[:, 0] + r[:, 2] ** 2)
        est = pgmc_estimate(data, m, FixedSpec(lambda z: z[:, 0]), seed=1)
        assert est.r2_hat == 1.0

    def test_invariants(self):
        est = pgmc_estimate(mixed_data(200, 4), LinearSpec(), LinearSpec(), alpha=0.1, seed=3)
        assert est.r2_hat == est.rn_star / est.sigma2_star
        assert est.r2_clamped == min(1.0, max(0.0, est.r2_hat))
        assert est.ci_low <= est.r2_hat <= est.ci_high
        half = normal_quantile(0.05) * math.sqrt(est.var_phi / 200)
        assert est.ci_high - est.r2_hat == pytest.approx(half, rel=1e-12)
        assert est.ci_low_trunc == max(0.0, est.ci_low)
        assert est.ci_high_trunc == min(1.0, est.ci_high)
        assert (est.n1, est.n2, est.alpha, est.seed) == (100, 100, 0.1, 3)

    def test_odd_n(self):
        est = pgmc_estimate(mixed_data(101, 5), LinearSpec(), LinearSpec())
        assert (est.n1, est.n2) == (51, 50)

    def test_influence_function_by_hand(self):
        data = mixed_data(40, 6)
        m, h = LinearSpec(), LinearSpec(0.0)
        est = pgmc_estimate(data, m, h, seed=7)
        split = make_balanced_split(40, 7)
        from pmdep.regress import fit

        mh = np.empty(40)
        hh = np.empty(40)
        rn, s2 = [], []
        for train, test in ((split.d1_idx, split.d2_idx), (split.d2_idx, split.d1_idx)):
            fm = fit(m, data.x[train], data.y[train])
            fh = fit(h, data.z[train], data.y[train])
            mh[test] = fm.predict_all(data.x[test])
            hh[test] = fh.predict_all(data.z[test])
            y = data.y[test]
            rn.append(np.mean((y - hh[test]) ** 2) - np.mean((y - mh[test]) ** 2))
            s2.append(np.mean((y - hh[test]) ** 2))
        R, S = np.mean(rn), np.mean(s2)
        e, eta, d = data.y - mh, data.y - hh, mh - hh
        phi = (d**2 + 2 * e * d) / S - R * eta**2 / S**2
        assert est.rn_star == pytest.approx(R, rel=1e-12)
        assert est.sigma2_star == pytest.approx(S, rel=1e-12)
        assert est.var_phi == pytest.approx(np.mean(phi**2), rel=1e-10)

    def test_degenerate_denominator(self):
        x = np.arange(20.0).reshape(10, 2)
        data = Dataset(x[:, 0], x, (0,), (1,))
        ident = FixedSpec(lambda r: r[:, 0])
        with pytest.raises(DegenerateDataError):
            pgmc_estimate(data, ident, ident)

    def test_size_and_alpha_checks(self):
        with pytest.raises(ValueError):
            pgmc_estimate(mixed_data(7, 0), LinearSpec(), LinearSpec())
        with pytest.raises(ValueError):
            pgmc_estimate(mixed_data(20, 0), LinearSpec(), LinearSpec(), alpha=1.0)

    @given(st.integers(0, 10**6))
    def test_swap_symmetry(self, seed):
        data = mixed_data(41, seed)
        split = make_balanced_split(41, seed)
        swapped = SplitPlan(split.d2_idx, split.d1_idx, 1 - split.xi, seed)
        a = pgmc_on_split(data, split, LinearSpec(), LinearSpec())
        b = pgmc_on_split(data, swapped, LinearSpec(), LinearSpec())
        for field in ("rn_star", "sigma2_star", "var_phi", "ci_low", "ci_high"):
            assert getattr(b, field) == pytest.approx(getattr(a, field), rel=1e-10, abs=1e-12)

    @given(st.integers(0, 10**6))
    def test_clamped_in_unit_interval(self, seed):
        est = pgmc_estimate(mixed_data(30, seed), GbtSpec(nrounds=10, max_depth=2),
                            LinearSpec(), seed=seed)
        assert 0.0 <= est.r2_clamped <= 1.0

    def test_deterministic(self):
        data = mixed_data(80, 9)
        spec = GbtSpec(nrounds=15, max_depth=3)
        assert pgmc_estimate(data, spec, spec, seed=2) == pgmc_estimate(data, spec, spec, seed=2)


class TestPopulationValues:
    def test_b2_constant_by_monte_carlo(self):
        rng = np.random.default_rng(20240601)
        cos_sum = 0.0
        sq_sum = 0.0
        n = 10**7
        for _ in range(10):
            w = rng.standard_normal(n // 10)
            cos_sum += np.cos(w).sum()
            sq_sum += (4 * np.sin(w / 2) ** 2).sum()
        e_cos, e_sq = cos_sum / n, sq_sum / n
        # sd of cos W is below 0.5, so the MC error is below 2e-4 at 10^7 draws
        assert e_cos == pytest.approx(math.exp(-0.5), abs=1e-3)
        assert e_sq == pytest.approx(2 * (1 - math.exp(-0.5)), abs=2e-3)
        assert e_sq / (e_sq + 1) == pytest.approx(B2_R2, abs=1e-3)
        assert B2_R2 == pytest.approx(0.4404, abs=1e-4)

    def test_b2_oracle_estimator(self):
        s = ScenarioSpec("B2", N=4000, p=10, seed=1)
        est = pgmc_estimate(generate(s), oracle_m(s), oracle_h(s))
        assert abs(est.r2_hat - B2_R2) <= 0.02

    def test_no_control_signal_matches_gmc(self):
        # E(Y|Z) = E(Y): the partial measure is the plain GMC of Y on X
        rng = np.random.default_rng(11)
        n = 4000
        x = rng.standard_normal((n, 3))
        y = np.sin(x[:, 2]) + 0.5 * rng.standard_normal(n)
        data = Dataset(y, x, (0, 1), (2,))
        m = FixedSpec(lambda r: np.sin(r[:, 2]))
        est = pgmc_estimate(data, m, FixedSpec(lambda z: np.zeros(z.shape[0])))
        gmc = 1 - np.mean((y - np.sin(x[:, 2])) ** 2) / np.var(y)
        assert est.r2_hat == pytest.approx(gmc, abs=0.02)

    def test_smaller_control_block_gives_larger_measure(self):
        s = ScenarioSpec("B1", N=20000, p=10, seed=5)
        data = generate(s)
        full = pgmc_estimate(data, oracle_m(s), oracle_h(s))
        c = (1 + 0.5 + 0.25) / math.sqrt(3)  # E(beta'Z | Z1) = c Z1
        sub = Dataset(data.y, data.x, (0,), tuple(range(1, 10)))
        partial = pgmc_estimate(sub, oracle_m(s), FixedSpec(lambda z: c * z[:, 0]))
        assert partial.r2_hat > full.r2_hat + 0.03


class TestScreening:
    def test_keep_all_is_plain_estimate(self):
        data = mixed_data(60, 12)
        spec = GbtSpec(nrounds=10, max_depth=2)
        plain = pgmc_estimate(data, spec, LinearSpec(), seed=4)
        screened = pgmc_with_screening(data, 5, spec, LinearSpec(), seed=4)
        assert screened.to_dict() | {"screening": None} == plain.to_dict() | {"screening": None}
        assert screened.screening["d1_x"] == [0, 1, 2, 3, 4]

    def test_response_copy_ranks_first(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((40, 4))
        y = x[:, 0] + rng.standard_normal(40)
        x[:, 3] = y
        data = Dataset(y, x, (0, 1), (2, 3))
        est = pgmc_with_screening(data, 1, LinearSpec(), LinearSpec())
        assert est.screening["d1_x"] == [3] and est.screening["d2_x"] == [3]

    def test_each_half_screens_its_own_rows(self):
        data = mixed_data(60, 14)
        est = pgmc_with_screening(data, 2, LinearSpec(), LinearSpec(), seed=8)
        split = make_balanced_split(60, 8)
        for label, rows in (("d1", split.d1_idx), ("d2", split.d2_idx)):
            expect = sorted(screen_features(data.x[rows], data.y[rows], 2).tolist())
            assert est.screening[f"{label}_x"] == expect
            z_expect = sorted(screen_features(data.z[rows], data.y[rows], 2).tolist())
            assert est.screening[f"{label}_z"] == z_expect

    def test_keep_positive(self):
        with pytest.raises(ValueError):
            pgmc_with_screening(mixed_data(20, 0), 0, LinearSpec(), LinearSpec())
