import dataclasses

import numpy as np
import pytest

from easi_lab.datasets import COLLECTION_TARGET_USD, THETA_ROUNDED, colombian_electricity_tax_scenario
from easi_lab.errors import Infeasible, LafferRegion
from easi_lab.taxopt import (
    OptimizerConfig,
    compare_scenarios,
    optimize,
    revenue_target,
    solve_theta_for_revenue,
)
from easi_lab.welfare import aggregate_ev, scenario_ev, stratum_revenue


@pytest.fixture(scope="module")
def scenario():
    return colombian_electricity_tax_scenario()


@pytest.fixture(scope="module")
def weighted(scenario):
    return optimize(scenario)


@pytest.fixture(scope="module")
def unweighted(scenario):
    return optimize(scenario, config=OptimizerConfig(weight_by_users=False))


def total_revenue(sc, theta):
    return float(np.sum(stratum_revenue(sc.with_theta(sc.theta, tax_per_unit=None), np.asarray(theta))))


def weighted_objective(sc, theta):
    return float(np.sum(scenario_ev(sc, np.asarray(theta)) * sc.users))


def flat_projection(sc):
    """Common rate meeting the revenue target, found by plain bisection."""
    lo, hi = 0.0, 0.05
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if total_revenue(sc, [mid] * sc.K) < revenue_target(sc) else (lo, mid)
    return np.full(sc.K, 0.5 * (lo + hi))


class TestBisection:
    def test_weak_ordering_boundary(self, scenario):
        cfg = OptimizerConfig(strict=False)
        head = [0.004, 0.006]
        target = total_revenue(scenario, head + [0.006])
        assert solve_theta_for_revenue(head, target, scenario, cfg) == pytest.approx(0.006, abs=1e-12)

    def test_published_alternative_rates(self, scenario):
        # soft band: the full 4-good calibration behind the published rates is not available
        th6 = solve_theta_for_revenue([0.0070, 0.0071], COLLECTION_TARGET_USD, scenario)
        assert th6 == pytest.approx(0.0072, abs=1e-3)

    def test_random_residuals(self, scenario):
        rng = np.random.default_rng(3)
        for _ in range(25):
            a = rng.uniform(0, 0.006)
            b = a + rng.uniform(0, 0.002)
            target = rng.uniform(total_revenue(scenario, [a, b, b]), total_revenue(scenario, [a, b, 0.05]))
            th6 = solve_theta_for_revenue([a, b], target, scenario)
            assert abs(total_revenue(scenario, [a, b, th6]) - target) / target < 1e-6
            assert th6 >= b

    def test_infeasible_reports_bracket(self, scenario):
        with pytest.raises(Infeasible) as info:
            solve_theta_for_revenue([0.001, 0.002], 1e9, scenario)
        lo, hi = info.value.bracket
        assert lo < hi < 1e9

    def test_wrong_head_length(self, scenario):
        with pytest.raises(ValueError):
            solve_theta_for_revenue([0.001], 1e5, scenario)


class TestOptimize:
    def test_feasible_and_dominant(self, scenario, weighted):
        th = weighted.theta
        assert np.all(np.diff(th) >= OptimizerConfig().min_gap - 1e-18)
        assert np.all((th >= 0) & (th <= 0.05))
        assert abs(weighted.revenue - COLLECTION_TARGET_USD) / COLLECTION_TARGET_USD < 1e-6
        assert weighted.objective <= weighted.baseline_objective + 1e-12
        assert weighted.objective == pytest.approx(weighted_objective(scenario, th), rel=1e-12)

    def test_beats_flat_projection(self, scenario, weighted):
        assert weighted.objective <= weighted_objective(scenario, flat_projection(scenario)) + 1e-12

    def test_first_stratum_below_baseline(self, scenario, weighted):
        assert weighted.theta[0] < scenario.theta[0]
        assert weighted.theta[0] < THETA_ROUNDED[0]

    @pytest.mark.xfail(strict=True, reason="user-weighted objective loads the tax onto stratum 6 only")
    def test_upper_strata_above_baseline_weighted(self, scenario, weighted):
        assert np.all(weighted.theta[1:] > scenario.theta[1:])

    def test_upper_strata_above_baseline_unweighted(self, scenario, unweighted):
        assert unweighted.theta[0] < scenario.theta[0]
        assert np.all(unweighted.theta[1:] > scenario.theta[1:])
        np.testing.assert_allclose(unweighted.theta, [0.0070, 0.0071, 0.0072], atol=1e-3)
        assert weighted_objective(scenario, unweighted.theta) < weighted_objective(scenario, scenario.theta)

    def test_brute_force_grid(self, scenario, weighted):
        g = np.linspace(0, 0.05, 50)
        T = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
        T = T[(np.diff(T, axis=1) >= 1e-6).all(axis=1)]
        rev = np.sum(stratum_revenue(scenario.with_theta(scenario.theta, tax_per_unit=None), T), axis=1)
        T = T[rev >= COLLECTION_TARGET_USD]
        obj = np.sum(scenario_ev(scenario, T) * scenario.users, axis=1)
        assert len(T) > 0
        assert obj.min() >= weighted.objective - 1e-9 * weighted.objective
        assert obj.min() <= weighted.objective * 1.05

    def test_deterministic(self, scenario, weighted):
        again = optimize(scenario)
        np.testing.assert_array_equal(again.theta, weighted.theta)
        assert again.objective == weighted.objective

    def test_single_stratum(self, scenario):
        sc = dataclasses.replace(
            scenario,
            strata=("4",),
            theta=scenario.theta[:1],
            P0=scenario.P0[:1],
            Q0=scenario.Q0[:1],
            users=scenario.users[:1],
            eps_m=scenario.eps_m[:1],
            X=scenario.X[:1],
            w0=scenario.w0[:1],
            semi=scenario.semi[:1],
            revenue_target=150_000.0,
        )
        res = optimize(sc)
        assert total_revenue(sc, res.theta) == pytest.approx(150_000.0, rel=1e-9)
        heavy = dataclasses.replace(sc, X=sc.X * 10)
        np.testing.assert_array_equal(optimize(heavy).theta, res.theta)

    def test_four_strata(self, scenario):
        idx = [0, 1, 2, 2]
        sc = dataclasses.replace(
            scenario,
            strata=("4", "5", "6a", "6b"),
            theta=scenario.theta[idx],
            P0=scenario.P0[idx],
            Q0=scenario.Q0[idx],
            users=scenario.users[idx] * np.array([1, 1, 0.5, 0.5]),
            eps_m=scenario.eps_m[idx],
            X=scenario.X[idx],
            w0=scenario.w0[idx],
            semi=scenario.semi[idx],
        )
        res = optimize(sc)
        assert np.all(np.diff(res.theta) >= 1e-6 - 1e-18)
        assert abs(res.revenue - COLLECTION_TARGET_USD) / COLLECTION_TARGET_USD < 1e-6
        assert res.objective <= weighted_objective(sc, flat_projection(sc)) + 1e-12

    def test_laffer_region(self, scenario):
        sc = dataclasses.replace(scenario, eps_m=np.array([-1.5, -0.6, -0.6]), gross_revenue=True)
        with pytest.raises(LafferRegion):
            optimize(sc)

    def test_infeasible_target(self, scenario):
        with pytest.raises(Infeasible):
            optimize(dataclasses.replace(scenario, revenue_target=1e9), config=OptimizerConfig(grid=20))

    def test_config_roundtrip(self):
        cfg = OptimizerConfig(theta_max=0.03, weight_by_users=False)
        assert OptimizerConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ValueError):
            OptimizerConfig(theta_max=0)


class TestCompare:
    def test_identical(self, scenario):
        df = compare_scenarios(scenario, scenario)
        assert np.all(df["delta"] == 0.0)

    def test_totals_match_welfare(self, scenario, weighted):
        df = compare_scenarios(scenario, weighted.alternative)
        rep = aggregate_ev(weighted.alternative)
        row = df[(df.group == "complete") & (df.metric == "total_ev_thousand_usd")]
        assert row["alternative"].iat[0] == pytest.approx(rep.total_ev_sum / 1e3, rel=1e-12)
        row = df[(df.group == "complete") & (df.metric == "collection_thousand_usd")]
        assert row["alternative"].iat[0] == pytest.approx(rep.revenue_sum / 1e3, rel=1e-12)

    def _collection_delta(self, scenario, alt):
        df = compare_scenarios(scenario, alt)
        return df[df.metric == "collection_thousand_usd"].set_index("group")["delta"]

    @pytest.mark.xfail(strict=True, reason="user-weighted optimum collects almost nothing from stratum 5")
    def test_collection_signs_weighted(self, scenario, weighted):
        d = self._collection_delta(scenario, weighted.alternative)
        assert d["4"] < 0 and d["5"] > 0 and d["6"] > 0

    def test_collection_signs_unweighted(self, scenario, unweighted):
        d = self._collection_delta(scenario, unweighted.alternative)
        assert d["4"] < 0 and d["5"] > 0 and d["6"] > 0
