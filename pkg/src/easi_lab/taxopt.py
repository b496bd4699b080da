"""Revenue-neutral progressive tax rates that minimise aggregate equivalent variation.

Rates are ordered ``theta_1 <= theta_2 <= ... <= theta_K`` (with a gap when
strict ordering is requested).  The last rate is pinned by the revenue
constraint and found by bisection, which leaves a search over the first
``K - 1`` rates: an exhaustive grid followed by a compass pattern search.
No randomness is involved and ties are broken by objective value first and
then lexicographically on ``theta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import Infeasible, LafferRegion
from .welfare import TaxScenario, aggregate_ev, scenario_ev, stratum_revenue


@dataclass
class OptimizerConfig:
    theta_max: float = 0.05
    revenue_rtol: float = 1e-6
    grid: int = 200
    shrink: float = 0.5
    min_step: float = 1e-7
    strict: bool = True
    min_gap: float = 1e-6
    weight_by_users: bool = True
    bisection_iterations: int = 200

    def __post_init__(self):
        if not self.theta_max > 0:
            raise ValueError("theta_max must be positive")
        if not (self.revenue_rtol > 0 and self.min_step > 0 and 0 < self.shrink < 1):
            raise ValueError("tolerances must be positive and shrink in (0, 1)")
        if self.grid < 2:
            raise ValueError("grid must have at least two points per axis")

    @property
    def gap(self):
        return self.min_gap if self.strict else 0.0

    @classmethod
    def from_dict(cls, d):
        return cls(**dict(d))

    def to_dict(self):
        return dict(self.__dict__)


def revenue_target(scenario: TaxScenario):
    """Target collection: the scenario's explicit target or its own current collection."""
    if scenario.revenue_target is not None:
        return float(scenario.revenue_target)
    return float(np.sum(stratum_revenue(scenario)))


def _revenue(scenario, theta):
    sc = scenario if scenario.tax_per_unit is None else scenario.with_theta(scenario.theta, tax_per_unit=None)
    return stratum_revenue(sc, theta)


def check_revenue_monotone(scenario: TaxScenario, theta_max):
    """Raise :class:`LafferRegion` unless every stratum's revenue rises with its rate on ``[0, theta_max]``.

    Revenue is quadratic in the rate, so the slope is linear and checking
    both endpoints suffices.
    """
    e = scenario.eps_m
    if scenario.gross_revenue:
        slope = lambda t: 1.0 + e + 2.0 * e * t
    else:
        slope = lambda t: 1.0 + 2.0 * e * t
    bad = np.flatnonzero((slope(0.0) <= 0) | (slope(theta_max) <= 0))
    if bad.size:
        raise LafferRegion(f"revenue not increasing in the rate for strata {[scenario.strata[i] for i in bad]}")


def _objective(scenario, theta, weight_by_users):
    ev = scenario_ev(scenario, theta)
    if weight_by_users:
        ev = ev * scenario.users
    return ev.sum(axis=-1)


def _bisect_last(scenario, head, target, config):
    """Vectorised bisection for the last rate given the leading ones.

    ``head`` has shape ``(..., K-1)``; returns ``(theta_last, feasible, bracket)``.
    """
    head = np.asarray(head, dtype=float)
    K = scenario.K
    lower = head[..., -1] + config.gap if K > 1 else np.zeros(head.shape[:-1])
    upper = np.full(lower.shape, config.theta_max)

    def total(last):
        th = np.concatenate([head, last[..., None]], axis=-1)
        return _revenue(scenario, th).sum(axis=-1)

    r_lo, r_hi = total(lower), total(upper)
    tol = config.revenue_rtol * abs(target)
    feasible = (lower <= upper) & (r_lo <= target + tol) & (r_hi >= target - tol)
    lo, hi = lower.copy(), upper.copy()
    for _ in range(config.bisection_iterations):
        mid = 0.5 * (lo + hi)
        below = total(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 4e-17 * np.maximum(1.0, hi)):
            break
    last = 0.5 * (lo + hi)
    # pick whichever bracket end hits the target more closely
    for cand in (lo, hi):
        better = np.abs(total(cand) - target) < np.abs(total(last) - target)
        last = np.where(better, cand, last)
    last = np.clip(last, lower, upper)
    return last, feasible, (r_lo, r_hi)


def solve_theta_for_revenue(head, target, scenario: TaxScenario, config: OptimizerConfig | None = None):
    """Last-stratum rate that meets ``target`` given the leading rates ``head``.

    Raises
    ------
    Infeasible
        When the revenue at the bracket ends does not straddle the target;
        the exception carries the bracketing revenues.
    """
    config = config or OptimizerConfig()
    check_revenue_monotone(scenario, config.theta_max)
    head = np.atleast_1d(np.asarray(head, dtype=float))
    if head.shape[-1] != scenario.K - 1:
        raise ValueError(f"need {scenario.K - 1} leading rates, got {head.shape[-1]}")
    if scenario.K > 1 and np.any(np.diff(head) < config.gap - 1e-18):
        raise Infeasible("leading rates violate the ordering constraint")
    last, ok, (r_lo, r_hi) = _bisect_last(scenario, head[None], float(target), config)
    if not ok[0]:
        raise Infeasible(
            f"revenue target {target:.6g} outside bracket [{r_lo[0]:.6g}, {r_hi[0]:.6g}]",
            bracket=(float(r_lo[0]), float(r_hi[0])),
        )
    return float(last[0])


@dataclass
class OptimizationResult:
    theta: np.ndarray
    objective: float
    revenue: float
    target: float
    baseline_theta: np.ndarray
    baseline_objective: float
    alternative: TaxScenario
    grid_theta: np.ndarray
    grid_objective: float
    feasible_cells: int
    pattern_iterations: int
    history: list = field(default_factory=list)

    def to_dict(self):
        return {
            "theta": self.theta.tolist(),
            "objective": self.objective,
            "revenue": self.revenue,
            "target": self.target,
            "baseline_theta": self.baseline_theta.tolist(),
            "baseline_objective": self.baseline_objective,
            "grid_theta": self.grid_theta.tolist(),
            "grid_objective": self.grid_objective,
            "feasible_cells": self.feasible_cells,
            "pattern_iterations": self.pattern_iterations,
        }


def _argmin(obj, thetas):
    """Index of the smallest objective, ties broken lexicographically on theta."""
    keys = [thetas[:, k] for k in range(thetas.shape[1] - 1, -1, -1)] + [obj]
    return int(np.lexsort(keys)[0])


def _evaluate(scenario, heads, target, config):
    """Objective and full theta for a batch of leading-rate vectors."""
    heads = np.asarray(heads, dtype=float)
    last, ok, _ = _bisect_last(scenario, heads, target, config)
    theta = np.concatenate([heads, last[..., None]], axis=-1)
    ok = ok & np.all(heads >= 0, axis=-1) & np.all(heads <= config.theta_max, axis=-1)
    if heads.shape[-1] > 1:
        ok &= np.all(np.diff(heads, axis=-1) >= config.gap - 1e-18, axis=-1)
    obj = np.where(ok, _objective(scenario, theta, config.weight_by_users), np.inf)
    return obj, theta, ok


def optimize(scenario: TaxScenario, params=None, config: OptimizerConfig | None = None) -> OptimizationResult:
    """Minimise (user-weighted) total EV subject to the revenue target and rate ordering.

    ``params`` is accepted for interface symmetry; the objective uses the
    linearised EV carried by ``scenario``.
    """
    config = config or OptimizerConfig()
    K = scenario.K
    target = revenue_target(scenario)
    check_revenue_monotone(scenario, config.theta_max)
    baseline_obj = float(_objective(scenario, scenario.theta, config.weight_by_users))

    if K == 1:
        th = np.array([solve_theta_for_revenue(np.zeros(0), target, scenario, config)])
        best_theta, best_obj, feasible_cells, iters = th, float(_objective(scenario, th, config.weight_by_users)), 1, 0
        grid_theta, grid_obj = th, best_obj
    else:
        d = K - 1
        ticks = np.linspace(0.0, config.theta_max, config.grid)
        if d <= 2:
            mesh = np.stack(np.meshgrid(*([ticks] * d), indexing="ij"), axis=-1).reshape(-1, d)
        else:
            # too many dimensions for a full grid: start from the ordered baseline
            mesh = np.sort(scenario.theta[:-1])[None] + config.gap * np.arange(d)
        obj, theta, ok = _evaluate(scenario, mesh, target, config)
        feasible_cells = int(ok.sum())
        if not feasible_cells:
            raise Infeasible("no grid point admits a revenue-neutral last rate")
        i = _argmin(obj, theta)
        grid_theta, grid_obj = theta[i], float(obj[i])
        best_theta, best_obj = grid_theta.copy(), grid_obj
        step = ticks[1] - ticks[0]
        iters = 0
        while step >= config.min_step:
            iters += 1
            polls = []
            for k in range(d):
                for sgn in (1.0, -1.0):
                    h = best_theta[:-1].copy()
                    h[k] += sgn * step
                    polls.append(h)
            pobj, ptheta, _ = _evaluate(scenario, np.array(polls), target, config)
            j = _argmin(pobj, ptheta)
            if pobj[j] < best_obj:
                best_obj, best_theta = float(pobj[j]), ptheta[j]
            else:
                step *= config.shrink

    alt = scenario.with_theta(best_theta, tax_per_unit=None)
    return OptimizationResult(
        theta=best_theta,
        objective=best_obj,
        revenue=float(np.sum(stratum_revenue(alt))),
        target=target,
        baseline_theta=scenario.theta.copy(),
        baseline_objective=baseline_obj,
        alternative=alt,
        grid_theta=grid_theta,
        grid_objective=grid_obj,
        feasible_cells=feasible_cells,
        pattern_iterations=iters,
    )


def compare_scenarios(baseline: TaxScenario, alternative: TaxScenario) -> pd.DataFrame:
    """Side-by-side table of rates, prices, EV and collection with deltas.

    Money columns: EV per household in US cents, totals and collections in
    thousand USD, prices in cents.
    """
    b, a = aggregate_ev(baseline), aggregate_ev(alternative)
    rows = [
        ("complete", "total_ev_thousand_usd", b.total_ev_sum / 1e3, a.total_ev_sum / 1e3),
        ("complete", "collection_thousand_usd", b.revenue_sum / 1e3, a.revenue_sum / 1e3),
    ]
    for k, s in enumerate(baseline.strata):
        rows += [
            (s, "theta_pct", 100 * b.theta[k], 100 * a.theta[k]),
            (s, "price_cents", 100 * b.P1[k], 100 * a.P1[k]),
            (s, "ev_per_household_cents", 100 * b.ev[k], 100 * a.ev[k]),
            (s, "total_ev_thousand_usd", b.total_ev[k] / 1e3, a.total_ev[k] / 1e3),
            (s, "ev_over_expenditure_pct", 100 * b.ev_share[k], 100 * a.ev_share[k]),
            (s, "collection_thousand_usd", b.revenue[k] / 1e3, a.revenue[k] / 1e3),
        ]
    df = pd.DataFrame(rows, columns=["group", "metric", "baseline", "alternative"])
    df["delta"] = df["alternative"] - df["baseline"]
    return df
