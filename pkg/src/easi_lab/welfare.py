"""Equivalent variation, quantity responses and tax revenue for tariff scenarios.

Two evaluation modes:

``exact``
    Utility after the change is solved from the model, base-price shares
    are the Hicksian shares at that utility.  The EV formula then coincides
    with the difference of exponentiated log costs.
``linearized``
    Shares after the change come from a first-order update with the
    Marshallian share semielasticities, as is usual when only estimated
    semielasticities at the observed point are available.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonPositivePrice
from .model import EasiParams, hicksian_shares, log_cost, solve_marshallian_shares
from .elasticity import ResolvedPoint, marshallian_price_semi

EV_FORMS = ("stone", "printed")


def updated_share(w0, semi, dP):
    """First-order share update ``w1 = w0 + (dw/dp) dP``.

    ``semi`` is the ``(J, J)`` Marshallian share semielasticity matrix (or a
    single column when only one price moves, with scalar ``dP``).
    """
    w0 = np.asarray(w0, dtype=float)
    semi = np.asarray(semi, dtype=float)
    dP = np.asarray(dP, dtype=float)
    if np.any(np.abs(dP) > 0.05):
        warnings.warn("first-order share update used for a price change above 5%", stacklevel=2)
    if semi.ndim == w0.ndim + 1:
        return w0 + np.einsum("...ij,...j->...i", semi, dP)
    return w0 + semi * dP[..., None] if dP.ndim else w0 + semi * dP


def equivalent_variation(X, P0, P1, w0, w1, A, *, form="stone", B=None, y=None, base=None):
    """Equivalent variation in money units of ``X``.

    Parameters
    ----------
    X : expenditure level (not log).
    P0, P1 : price levels before and after; logs are taken relative to
        ``base`` (default 1, i.e. prices in their own units).
    w0, w1 : shares before and after.
    A : price matrix (``sum_l z_l A_l`` when interactions are present).
    form : ``"stone"`` uses ``sum(log P1 w1 - log P0 w0)``, the reading under
        which the formula is the exact cost difference.  ``"printed"`` uses
        ``sum(log(P1 w1) - log(P0 w0))``.
    B, y : optional price-utility interaction and the utility at which it is
        evaluated; adds ``(y/2)(p1'Bp1 - p0'Bp0)``.

    All array arguments broadcast over leading axes.
    """
    P0 = np.asarray(P0, dtype=float)
    P1 = np.asarray(P1, dtype=float)
    if np.any(P0 <= 0) or np.any(P1 <= 0):
        raise NonPositivePrice("prices must be strictly positive")
    if form not in EV_FORMS:
        raise ValueError(f"form must be one of {EV_FORMS}")
    base = 1.0 if base is None else np.asarray(base, dtype=float)
    lp0 = np.log(P0 / base)
    lp1 = np.log(P1 / base)
    w0 = np.asarray(w0, dtype=float)
    w1 = np.asarray(w1, dtype=float)
    A = np.asarray(A, dtype=float)
    if form == "stone":
        stone = np.sum(lp1 * w1 - lp0 * w0, axis=-1)
    else:
        stone = np.sum((lp1 - lp0) + np.log(w1 / w0), axis=-1)
    quad = 0.5 * (np.einsum("...i,...ij,...j->...", lp1, A, lp1) - np.einsum("...i,...ij,...j->...", lp0, A, lp0))
    if B is not None:
        yv = 0.0 if y is None else np.asarray(y, dtype=float)
        B = np.asarray(B, dtype=float)
        quad = quad + 0.5 * yv * (np.einsum("...i,ij,...j->...", lp1, B, lp1) - np.einsum("...i,ij,...j->...", lp0, B, lp0))
    X = np.asarray(X, dtype=float)
    same = np.all(P1 == P0, axis=-1)
    ev = X - np.exp(np.log(X) - stone + quad)
    return np.where(same, 0.0, ev) if np.ndim(ev) else (0.0 if same else float(ev))


def _lp(P, base):
    return np.log(np.asarray(P, dtype=float) / (1.0 if base is None else np.asarray(base, dtype=float)))


@dataclass(frozen=True)
class EVResult:
    ev: float
    u1: float
    w0: np.ndarray
    w1: np.ndarray
    mode: str


def model_ev(X, P0, P1, params: EasiParams, z=None, eps=None, *, mode="exact", base=None, form="stone") -> EVResult:
    """EV of the move ``P0 -> P1`` for a household with expenditure level ``X``.

    ``base`` is the price vector at which model log prices are zero.
    """
    z = np.zeros(params.L) if z is None else np.asarray(z, dtype=float)
    lp0, lp1 = _lp(P0, base), _lp(P1, base)
    x = np.log(X)
    A = params.price_matrix(z)
    if mode == "exact":
        w1, u1 = solve_marshallian_shares(x, lp1, z, eps, params)
        w0 = hicksian_shares(u1, lp0, z, eps, params)
    elif mode == "linearized":
        w0, u0 = solve_marshallian_shares(x, lp0, z, eps, params)
        r = ResolvedPoint(p=lp0, z=z, eps=eps, x=x, y=float(u0), w=w0, y_given=False)
        semi = marshallian_price_semi(r, params)
        w1 = w0 + semi @ (np.asarray(P1, float) / np.asarray(P0, float) - 1.0)
        u1 = u0
    else:
        raise ValueError("mode must be 'exact' or 'linearized'")
    ev = equivalent_variation(X, P0, P1, w0, w1, A, form=form, B=params.B, y=u1, base=base)
    return EVResult(float(ev), float(u1), w0, w1, mode)


def cost_difference_ev(X, P0, P1, params: EasiParams, z=None, eps=None, base=None):
    """``exp(log C(p1, u1)) - exp(log C(p0, u1))`` with ``u1`` the post-change utility."""
    z = np.zeros(params.L) if z is None else np.asarray(z, dtype=float)
    lp0, lp1 = _lp(P0, base), _lp(P1, base)
    _, u1 = solve_marshallian_shares(np.log(X), lp1, z, eps, params)
    return float(np.exp(log_cost(u1, lp1, z, eps, params)) - np.exp(log_cost(u1, lp0, z, eps, params)))


def quantity_response(Q0, eps_m, dP):
    """``Q1 = Q0 (1 + eps_m dP)``."""
    Q0 = np.asarray(Q0, dtype=float)
    if np.any(Q0 < 0):
        raise ValueError("Q0 must be non-negative")
    out = Q0 * (1.0 + np.asarray(eps_m, dtype=float) * np.asarray(dP, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class TaxScenario:
    """Per-stratum tariff increase on one good, evaluated at representative households.

    Arrays are indexed by stratum (first axis) and good (second axis).
    ``semi`` holds the Marshallian share semielasticities with respect to
    the taxed good's log price (one column per stratum).
    """

    strata: tuple
    theta: np.ndarray
    P0: np.ndarray  # (K, J) price levels
    Q0: np.ndarray  # (K,) taxed-good quantities
    users: np.ndarray
    eps_m: np.ndarray  # (K,) own-price Marshallian elasticity of the taxed good
    X: np.ndarray  # (K,) expenditure levels of the representative households
    w0: np.ndarray  # (K, J)
    semi: np.ndarray  # (K, J)
    A: np.ndarray  # (J, J)
    taxed: int = 0
    goods: tuple = ()
    ev_form: str = "stone"
    tax_per_unit: np.ndarray | None = None
    revenue_target: float | None = None
    gross_revenue: bool = False
    price_base: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("theta", "P0", "Q0", "users", "eps_m", "X", "w0", "semi", "A"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        K = len(self.strata)
        self.P0 = self.P0.reshape(K, -1)
        self.w0 = self.w0.reshape(K, -1)
        self.semi = self.semi.reshape(K, -1)
        if self.tax_per_unit is not None:
            self.tax_per_unit = np.broadcast_to(np.asarray(self.tax_per_unit, dtype=float), (K,)).copy()
        if np.any(self.theta <= -1):
            raise ValueError("theta must exceed -1")
        if np.any(self.users < 0) or np.any(self.Q0 < 0):
            raise ValueError("users and Q0 must be non-negative")
        if self.ev_form not in EV_FORMS:
            raise ValueError(f"ev_form must be one of {EV_FORMS}")

    @property
    def K(self):
        return len(self.strata)

    @property
    def x(self):
        return np.log(self.X)

    def with_theta(self, theta, **changes) -> "TaxScenario":
        return replace(self, theta=np.asarray(theta, dtype=float), **changes)

    def to_dict(self):
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "strata": list(self.strata),
            "theta": arr(self.theta),
            "P0": arr(self.P0),
            "Q0": arr(self.Q0),
            "users": arr(self.users),
            "eps_m": arr(self.eps_m),
            "X": arr(self.X),
            "w0": arr(self.w0),
            "semi": arr(self.semi),
            "A": arr(self.A),
            "taxed": self.taxed,
            "goods": list(self.goods),
            "ev_form": self.ev_form,
            "tax_per_unit": arr(self.tax_per_unit),
            "revenue_target": self.revenue_target,
            "gross_revenue": self.gross_revenue,
            "price_base": arr(self.price_base),
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["strata"] = tuple(d["strata"])
        d["goods"] = tuple(d.get("goods", ()))
        for key in ("tax_per_unit", "price_base"):
            if d.get(key) is not None:
                d[key] = np.asarray(d[key], dtype=float)
        return cls(**d)


def scenario_prices(scenario: TaxScenario, theta=None):
    """Post-change price levels, shape ``theta.shape + (J,)``."""
    theta = scenario.theta if theta is None else np.asarray(theta, dtype=float)
    P1 = np.broadcast_to(scenario.P0, theta.shape + (scenario.P0.shape[1],)).copy()
    P1[..., scenario.taxed] *= 1.0 + theta
    return P1


def scenario_ev(scenario: TaxScenario, theta=None, form=None):
    """Linearised EV per representative household; broadcasts over leading axes of ``theta``."""
    theta = scenario.theta if theta is None else np.asarray(theta, dtype=float)
    P1 = scenario_prices(scenario, theta)
    w1 = scenario.w0 + scenario.semi * theta[..., None]
    ev = equivalent_variation(
        scenario.X,
        scenario.P0,
        P1,
        scenario.w0,
        w1,
        scenario.A,
        form=form or scenario.ev_form,
        base=scenario.price_base,
    )
    return np.where(theta == 0, 0.0, ev)


def scenario_quantities(scenario: TaxScenario, theta=None):
    theta = scenario.theta if theta is None else np.asarray(theta, dtype=float)
    return quantity_response(scenario.Q0, scenario.eps_m, theta)


def stratum_revenue(scenario: TaxScenario, theta=None, gross=None):
    """Monthly collection per stratum.

    Tax component: ``tax_per_unit * Q1 * users`` with ``tax_per_unit`` equal
    to ``theta * P0`` unless the scenario fixes it.  Gross: ``P1 Q1 users``.
    """
    theta = scenario.theta if theta is None else np.asarray(theta, dtype=float)
    gross = scenario.gross_revenue if gross is None else gross
    Q1 = scenario_quantities(scenario, theta)
    P0 = scenario.P0[:, scenario.taxed]
    if gross:
        return P0 * (1.0 + theta) * Q1 * scenario.users
    tpu = theta * P0 if scenario.tax_per_unit is None else scenario.tax_per_unit
    return tpu * Q1 * scenario.users


@dataclass
class WelfareReport:
    """Per-stratum and total welfare and revenue figures (USD)."""

    strata: tuple
    theta: np.ndarray
    ev: np.ndarray  # per representative household
    total_ev: np.ndarray  # ev * users
    ev_share: np.ndarray  # ev / utility expenditure
    revenue: np.ndarray
    Q1: np.ndarray
    P1: np.ndarray  # taxed-good price after the change
    users: np.ndarray

    @property
    def total_ev_sum(self):
        return float(np.sum(self.total_ev))

    @property
    def revenue_sum(self):
        return float(np.sum(self.revenue))

    def to_dict(self):
        return {
            "strata": list(self.strata),
            "theta": self.theta.tolist(),
            "ev_per_household": self.ev.tolist(),
            "total_ev": self.total_ev.tolist(),
            "ev_over_expenditure": self.ev_share.tolist(),
            "revenue": self.revenue.tolist(),
            "Q1": self.Q1.tolist(),
            "P1": self.P1.tolist(),
            "users": self.users.tolist(),
            "totals": {"total_ev": self.total_ev_sum, "revenue": self.revenue_sum, "users": float(np.sum(self.users))},
        }


def revenue(scenario: TaxScenario) -> WelfareReport:
    return aggregate_ev(scenario)


def aggregate_ev(scenario: TaxScenario, theta=None) -> WelfareReport:
    """Representative-household mode: per-household EV scaled by user counts."""
    theta = scenario.theta if theta is None else np.asarray(theta, dtype=float)
    ev = scenario_ev(scenario, theta)
    return WelfareReport(
        strata=tuple(scenario.strata),
        theta=theta,
        ev=ev,
        total_ev=ev * scenario.users,
        ev_share=ev / scenario.X,
        revenue=stratum_revenue(scenario, theta),
        Q1=scenario_quantities(scenario, theta),
        P1=scenario.P0[:, scenario.taxed] * (1.0 + theta),
        users=scenario.users,
    )


@dataclass
class PopulationWelfare:
    ev: np.ndarray  # per household, NaN for excluded ones
    included: np.ndarray
    by_stratum: dict
    total: float


def population_ev(sample, params: EasiParams, rel_change, *, mode="exact", base=None, form="stone", X_scale=1.0):
    """Weighted EV over a household sample.

    ``rel_change`` maps stratum to the proportional change of each price
    level (a length-``J`` vector); households whose stratum is absent face
    no change.  ``sample.x`` is log expenditure relative to ``X_scale``.
    Households with a zero (or negative) share are left out.
    """
    n = len(sample)
    ev = np.full(n, np.nan)
    included = np.all(sample.w > 0, axis=1)
    by = {}
    for i in np.flatnonzero(included):
        d = np.asarray(rel_change.get(sample.stratum[i], np.zeros(sample.J)), dtype=float)
        P0 = np.exp(sample.p[i])
        P1 = P0 * (1.0 + d)
        X = X_scale * np.exp(sample.x[i])
        ev[i] = 0.0 if not np.any(d) else model_ev(X, P0, P1, params, sample.z[i], mode=mode, base=base, form=form).ev
        by[sample.stratum[i]] = by.get(sample.stratum[i], 0.0) + sample.weight[i] * ev[i]
    total = float(np.sum(sample.weight[included] * ev[included]))
    return PopulationWelfare(ev, included, by, total)
