"""Derivatives of EASI budget shares and the elasticities built from them.

All functions take an :class:`~easi_lab.model.EvalPoint`.  When the point
carries ``x`` the implicit utility is solved for; when it carries ``y`` the
Hicksian shares at ``y`` are used and ``x`` is recovered from the log cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularJacobian, ZeroShare
from .model import (
    EasiParams,
    EvalPoint,
    hicksian_shares,
    log_cost,
    price_denominator,
    share_y_gradient,
    solve_marshallian_shares,
)

CONCAVITY_TOL = 1e-8
ZERO_SHARE_TOL = 1e-10


@dataclass(frozen=True)
class ResolvedPoint:
    p: np.ndarray
    z: np.ndarray
    eps: np.ndarray | None
    x: float
    y: float
    w: np.ndarray
    y_given: bool


def resolve(point: EvalPoint, params: EasiParams) -> ResolvedPoint:
    """Fill in whichever of ``x``/``y`` is missing, plus the fitted shares."""
    p = np.asarray(point.p, dtype=float)
    z = np.asarray(point.z, dtype=float)
    if point.y_given:
        y = float(point.y)
        w = hicksian_shares(y, p, z, point.eps, params)
        x = float(log_cost(y, p, z, point.eps, params))
    else:
        x = float(point.x)
        w, y = solve_marshallian_shares(x, p, z, point.eps, params)
    return ResolvedPoint(p=p, z=z, eps=point.eps, x=x, y=float(y), w=w, y_given=point.y_given)


def _resolved(point, params):
    return point if isinstance(point, ResolvedPoint) else resolve(point, params)


def compensated_price_semi(point, params: EasiParams):
    """Hicksian share derivatives with respect to log prices, ``sum z_l A_l + B y``."""
    r = _resolved(point, params)
    return params.price_matrix(r.z) + params.B * r.y


def real_expenditure_semi(point, params: EasiParams):
    """Hicksian share derivatives with respect to ``y``."""
    r = _resolved(point, params)
    return share_y_gradient(r.y, r.p, r.z, params)


def demographic_semi(point, params: EasiParams):
    """``(L, J)`` matrix whose row ``l`` is ``c_l + d_l y + A_l p``."""
    r = _resolved(point, params)
    out = params.C + params.D * r.y
    if params.interactions:
        out = out + params.A[1:] @ r.p
    return out


def normalized_slutsky(Gamma, w):
    """Normalised Slutsky matrix ``Gamma + w w' - diag(w)`` and its eigenvalues (ascending)."""
    w = np.asarray(w, dtype=float)
    S = np.asarray(Gamma, dtype=float) + np.outer(w, w) - np.diag(w)
    S = 0.5 * (S + S.T)
    return S, np.linalg.eigvalsh(S)


@dataclass(frozen=True)
class ConcavityResult:
    passed: bool
    eigenvalues: np.ndarray
    offending: np.ndarray

    def __bool__(self):
        return self.passed


def check_concavity(S, tol=CONCAVITY_TOL) -> ConcavityResult:
    """Pass iff the largest eigenvalue of ``S`` is at most ``tol``."""
    S = np.asarray(S, dtype=float)
    eig = np.linalg.eigvalsh(0.5 * (S + S.T))
    bad = eig[eig > tol]
    return ConcavityResult(passed=bad.size == 0, eigenvalues=eig, offending=bad)


def marshallian_expenditure_semi(point, params: EasiParams, form="exact"):
    """Marshallian share derivatives with respect to ``x``.

    Parameters
    ----------
    form : {"exact", "printed"}
        ``"exact"`` differentiates the implicit system, giving
        ``(I + v p'/d)^{-1} v / d`` with ``v = dw/dy`` and
        ``d = 1 - p'Bp/2``.  ``"printed"`` is the often-quoted variant
        ``(I - v p'/d)^{-1} (1 - x) v / d``; the two agree only at ``p = 0``
        and ``x = 0``.  Kept for comparison with published tables.
    """
    r = _resolved(point, params)
    v = share_y_gradient(r.y, r.p, r.z, params)
    d = float(price_denominator(r.p, params))
    J = params.J
    if form == "exact":
        M = np.eye(J) + np.outer(v, r.p) / d
        rhs = v / d
    elif form == "printed":
        M = np.eye(J) - np.outer(v, r.p) / d
        rhs = (1.0 - r.x) * v / d
    else:
        raise ValueError(f"unknown form {form!r}")
    if abs(np.linalg.det(M)) < 1e-12 or np.linalg.cond(M) > 1e12:
        raise SingularJacobian("expenditure Jacobian is singular")
    return np.linalg.solve(M, rhs)


def marshallian_price_semi(point, params: EasiParams, form="exact"):
    """``Gamma - (dw/dx) w'`` evaluated at the fitted shares."""
    r = _resolved(point, params)
    Gamma = compensated_price_semi(r, params)
    return Gamma - np.outer(marshallian_expenditure_semi(r, params, form=form), r.w)


def elasticities(point, params: EasiParams, form="exact"):
    """Own-price, expenditure and full Marshallian price elasticities.

    Returns
    -------
    ope : (J,) ``(dw/dp)_ii / w_i - 1``
    ee : (J,) ``(dw/dx)_i / w_i + 1``
    eps_m : (J, J) ``(dw/dp)_ij / w_i - 1{i == j}``
    """
    r = _resolved(point, params)
    if np.any(r.w < ZERO_SHARE_TOL):
        raise ZeroShare(f"share below {ZERO_SHARE_TOL:g}: {np.flatnonzero(r.w < ZERO_SHARE_TOL).tolist()}")
    gx = marshallian_expenditure_semi(r, params, form=form)
    gp = marshallian_price_semi(r, params, form=form)
    eps_m = gp / r.w[:, None] - np.eye(params.J)
    ee = gx / r.w + 1.0
    return np.diag(eps_m).copy(), ee, eps_m


def engel_curve(params: EasiParams, z, eps, x_grid):
    """Shares along ``x_grid`` at base prices; returns ``(len(x_grid), J)``."""
    x_grid = np.asarray(x_grid, dtype=float)
    z = np.broadcast_to(np.asarray(z, dtype=float), x_grid.shape + (params.L,))
    p = np.zeros(x_grid.shape + (params.J,))
    e = None if eps is None else np.broadcast_to(np.asarray(eps, dtype=float), p.shape)
    return hicksian_shares(x_grid, p, z, e, params)


@dataclass
class ElasticityReport:
    point: ResolvedPoint
    Gamma: np.ndarray
    real_exp_semi: np.ndarray
    demo_semi: np.ndarray
    S: np.ndarray
    S_eigenvalues: np.ndarray
    concave: bool
    marshall_x_semi: np.ndarray
    marshall_p_semi: np.ndarray
    OPE: np.ndarray
    EE: np.ndarray
    eps_M: np.ndarray
    goods: tuple = ()
    demographics: tuple = ()
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        def m(a):
            return np.asarray(a).tolist()

        return {
            "goods": list(self.goods),
            "demographics": list(self.demographics),
            "point": {
                "p": m(self.point.p),
                "z": m(self.point.z),
                "x": self.point.x,
                "y": self.point.y,
                "y_given": self.point.y_given,
                "w": m(self.point.w),
            },
            "compensated_price_semi": m(self.Gamma),
            "real_expenditure_semi": m(self.real_exp_semi),
            "demographic_semi": m(self.demo_semi),
            "slutsky": m(self.S),
            "slutsky_eigenvalues": m(self.S_eigenvalues),
            "concave": bool(self.concave),
            "marshallian_expenditure_semi": m(self.marshall_x_semi),
            "marshallian_price_semi": m(self.marshall_p_semi),
            "own_price_elasticity": m(self.OPE),
            "expenditure_elasticity": m(self.EE),
            "marshallian_price_elasticity": m(self.eps_M),
            **self.extra,
        }


def elasticity_report(point: EvalPoint, params: EasiParams, form="exact") -> ElasticityReport:
    r = resolve(point, params)
    Gamma = compensated_price_semi(r, params)
    S, eig = normalized_slutsky(Gamma, r.w)
    ope, ee, eps_m = elasticities(r, params, form=form)
    return ElasticityReport(
        point=r,
        Gamma=Gamma,
        real_exp_semi=real_expenditure_semi(r, params),
        demo_semi=demographic_semi(r, params),
        S=S,
        S_eigenvalues=eig,
        concave=check_concavity(S).passed,
        marshall_x_semi=marshallian_expenditure_semi(r, params, form=form),
        marshall_p_semi=marshallian_price_semi(r, params, form=form),
        OPE=ope,
        EE=ee,
        eps_M=eps_m,
        goods=params.goods,
        demographics=params.demographics,
    )
