"""Calibrated inputs for the Colombian residential electricity surcharge.

Four goods in the order electricity, water, sewerage, natural gas; three
strata (4, 5, 6) hit by a flat surcharge of USD 0.0012 per kWh.
"""

from __future__ import annotations

import numpy as np

from .welfare import TaxScenario, equivalent_variation, scenario_prices

GOODS = ("electricity", "water", "sewerage", "gas")
STRATA = ("4", "5", "6")
SURCHARGE_USD_PER_KWH = 0.0012
FX_COP_PER_USD = 3038.26

# compensated price matrix at the representative household; the published
# entries cover electricity, water and gas, sewerage follows from homogeneity
A_REPRESENTATIVE = np.array(
    [
        [0.1054, -0.0792, -0.0024, -0.0238],
        [-0.0792, 0.0605, 0.0192, -0.0005],
        [-0.0024, 0.0192, -0.0232, 0.0064],
        [-0.0238, -0.0005, 0.0064, 0.0179],
    ]
)

SHARES = np.array(
    [
        [0.58, 0.25, 0.06, 0.11],
        [0.48, 0.32, 0.08, 0.12],
        [0.54, 0.29, 0.07, 0.11],
    ]
)
PRICE_LEVELS = np.array(  # USD per kWh / m3
    [
        [0.16, 0.55, 0.46, 0.47],
        [0.19, 0.87, 0.77, 0.57],
        [0.18, 1.02, 0.85, 0.57],
    ]
)
# electricity price after the surcharge, USD/kWh
ELECTRICITY_PRICE_WITH_TAX = np.array([0.1594, 0.1859, 0.1774])
# expenditure elasticities for electricity, water and gas
EXPENDITURE_ELASTICITY = np.array(
    [
        [1.0021, 1.2710, 0.6995],
        [0.9112, 1.5238, 0.4946],
        [0.9782, 1.3280, 0.6156],
    ]
)
OWN_PRICE_ELASTICITY = np.array([-0.7295, -0.6494, -0.6555])
Q0_KWH = np.array([164.04, 199.09, 309.40])
USERS = np.array([999_654, 380_812, 219_857], dtype=float)
THETA_ROUNDED = np.array([0.0076, 0.0065, 0.0068])
BASELINE_EV_USD = np.array([0.6125, 0.6947, 0.9717])
COLLECTION_TARGET_USD = 367_540.0


def _expenditure_elasticities(w):
    """Fill in sewerage so that share-weighted elasticities sum to one."""
    ee = np.empty_like(w)
    ee[:, [0, 1, 3]] = EXPENDITURE_ELASTICITY
    ee[:, 2] = (1.0 - (w[:, [0, 1, 3]] * EXPENDITURE_ELASTICITY).sum(axis=1)) / w[:, 2]
    return ee


def electricity_share_semi(w=None, A=A_REPRESENTATIVE):
    """Marshallian share semielasticities with respect to the electricity price.

    ``dw_j/dp_e = A_je - (dw_j/dx) w_e`` with ``dw_j/dx = (EE_j - 1) w_j``.
    """
    w = SHARES / SHARES.sum(axis=1, keepdims=True) if w is None else w
    dwdx = (_expenditure_elasticities(w) - 1.0) * w
    return A[None, :, 0] - dwdx * w[:, [0]]


def colombian_electricity_tax_scenario(ev_form="printed", calibrate_expenditure=True) -> TaxScenario:
    """Baseline flat surcharge scenario for strata 4-6.

    Pre-tax electricity prices are the post-tax prices less the surcharge,
    so ``theta_k = 0.0012 / P0_k``.  When ``calibrate_expenditure`` is set,
    each representative household's utility expenditure is chosen so that
    its baseline EV matches the published per-household figures (EV is
    proportional to expenditure at fixed shares and prices).
    """
    w = SHARES / SHARES.sum(axis=1, keepdims=True)
    P0 = PRICE_LEVELS.copy()
    P0[:, 0] = ELECTRICITY_PRICE_WITH_TAX - SURCHARGE_USD_PER_KWH
    theta = SURCHARGE_USD_PER_KWH / P0[:, 0]
    semi = electricity_share_semi(w)
    X = np.ones(3)
    if calibrate_expenditure:
        P1 = P0.copy()
        P1[:, 0] *= 1.0 + theta
        unit = equivalent_variation(1.0, P0, P1, w, w + semi * theta[:, None], A_REPRESENTATIVE, form=ev_form)
        X = BASELINE_EV_USD / unit
    return TaxScenario(
        strata=STRATA,
        theta=theta,
        P0=P0,
        Q0=Q0_KWH,
        users=USERS,
        eps_m=OWN_PRICE_ELASTICITY,
        X=X,
        w0=w,
        semi=semi,
        A=A_REPRESENTATIVE,
        taxed=0,
        goods=GOODS,
        ev_form=ev_form,
        revenue_target=COLLECTION_TARGET_USD,
        metadata={"currency": "USD", "fx_cop_per_usd": FX_COP_PER_USD},
    )


def quantity_table_scenario() -> TaxScenario:
    """Rounded rates with the surcharge fixed per kWh, as in the quantity/collection table."""
    sc = colombian_electricity_tax_scenario()
    return sc.with_theta(THETA_ROUNDED.copy(), tax_per_unit=np.full(3, SURCHARGE_USD_PER_KWH))


def implied_theta(prices=ELECTRICITY_PRICE_WITH_TAX, surcharge=SURCHARGE_USD_PER_KWH, prices_include_tax=False):
    """Proportional increase implied by a per-unit surcharge.

    With ``prices_include_tax`` the surcharge is removed first, so the rate
    is measured against the pre-tax price.
    """
    prices = np.asarray(prices, dtype=float)
    base = prices - surcharge if prices_include_tax else prices
    return surcharge / base


# published coefficients at the representative household (electricity, water, gas);
# sewerage entries follow from adding-up and homogeneity
B_OWN = np.array([0.0545, 0.0277, -0.0033])
REAL_EXPENDITURE_SEMI = np.array([0.0701, -0.0053, -0.0302])
MEMBERS_SEMI = np.array([0.0029, -0.0207, 0.0038])


def _complete_sewerage(v):
    """Insert the sewerage entry so that the four entries sum to zero."""
    return np.array([v[0], v[1], -v.sum(), v[2]])


def representative_params(shares=None):
    """EASI parameters reproducing the published representative-point derivatives.

    Only the entries that are printed are filled in: ``A_0``, the own-price
    diagonal of ``B`` (off-diagonals among the published goods set to zero),
    ``b_1`` and the household-size column of ``C``.  ``b_0`` defaults to the
    stratum-4 shares.  Everything else is zero.
    """
    from .estimator import _complete
    from .model import EasiParams

    b0 = SHARES[0] if shares is None else np.asarray(shares, dtype=float)
    b1 = _complete_sewerage(REAL_EXPENDITURE_SEMI)
    C = _complete_sewerage(MEMBERS_SEMI)[None]
    # complete B with sewerage as the implied row/column
    order = [0, 1, 3, 2]
    B = _complete(np.diag(B_OWN))
    inv = np.argsort(order)
    B = B[inv][:, inv]
    return EasiParams(
        b=np.vstack([b0, b1]),
        C=C,
        D=np.zeros((1, 4)),
        A=A_REPRESENTATIVE,
        B=B,
        goods=GOODS,
        demographics=("members",),
        metadata={"source": "representative-point calibration"},
    )
