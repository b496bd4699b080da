"""EASI demand model: parameters, shares, implicit utility and log cost.

Everything here is vectorised over leading axes: ``p`` may be ``(J,)`` or
``(n, J)``, ``z`` correspondingly ``(L,)`` or ``(n, L)``, and ``x``/``y`` scalars
or ``(n,)``.  Log prices and demographics are assumed already centred at the
representative household (base prices = 1, i.e. ``p = 0``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import DegenerateDenominator, NoConvergence, SchemaError

PARAMS_FORMAT = "easi-params/1"
DENOMINATOR_EPS = 1e-12


def vech(M):
    """Upper triangle of a square matrix, row-major."""
    M = np.asarray(M)
    return M[np.triu_indices(M.shape[-1])]


def unvech(v, J):
    """Inverse of :func:`vech` returning an exactly symmetric matrix."""
    v = np.asarray(v, dtype=float)
    iu = np.triu_indices(J)
    if v.shape != (len(iu[0]),):
        raise SchemaError(f"half-vectorised matrix needs {len(iu[0])} entries, got {v.shape}")
    M = np.zeros((J, J))
    M[iu] = v
    return M + np.triu(M, 1).T


def _symmetric(M):
    return unvech(vech(M), M.shape[-1])


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EasiParams:
    """Full EASI coefficient set.

    Attributes
    ----------
    b : (R+1, J) Engel polynomial coefficients, row ``r`` multiplies ``y**r``.
    C : (L, J) demographic intercepts.
    D : (L, J) demographic slopes on ``y``.
    A : (1, J, J) or (L+1, J, J) compensated price matrices; ``A[0]`` is the
        intercept, ``A[l]`` interacts with ``z_l`` when price-demographic
        interactions are on.
    B : (J, J) price-``y`` interaction matrix.

    ``A`` and ``B`` are symmetrised by reading their upper triangles, so
    symmetry holds exactly.
    """

    b: np.ndarray
    C: np.ndarray
    D: np.ndarray
    A: np.ndarray
    B: np.ndarray
    goods: tuple = ()
    demographics: tuple = ()
    centering: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        J = b.shape[1]
        C = np.asarray(self.C, dtype=float).reshape(-1, J)
        D = np.asarray(self.D, dtype=float).reshape(-1, J)
        if C.shape != D.shape:
            raise SchemaError(f"C {C.shape} and D {D.shape} disagree")
        L = C.shape[0]
        A = np.asarray(self.A, dtype=float)
        if A.ndim == 2:
            A = A[None]
        if A.shape[1:] != (J, J) or A.shape[0] not in (1, L + 1):
            raise SchemaError(f"A must be (1, J, J) or (L+1, J, J); got {A.shape} for J={J}, L={L}")
        B = np.asarray(self.B, dtype=float)
        if B.shape != (J, J):
            raise SchemaError(f"B must be ({J}, {J}); got {B.shape}")
        A = np.stack([_symmetric(a) for a in A])
        B = _symmetric(B)
        goods = tuple(self.goods) or tuple(f"good{j + 1}" for j in range(J))
        demos = tuple(self.demographics) or tuple(f"z{l + 1}" for l in range(L))
        if len(goods) != J or len(demos) != L:
            raise SchemaError("label lengths do not match dimensions")
        for name, val in (("b", b), ("C", C), ("D", D), ("A", A), ("B", B)):
            object.__setattr__(self, name, _readonly(val))
        object.__setattr__(self, "goods", goods)
        object.__setattr__(self, "demographics", demos)

    @property
    def J(self) -> int:
        return self.b.shape[1]

    @property
    def L(self) -> int:
        return self.C.shape[0]

    @property
    def R(self) -> int:
        return self.b.shape[0] - 1

    @property
    def interactions(self) -> bool:
        return self.A.shape[0] > 1

    def demographic_weights(self, z):
        """Weights ``(1, z_1, ..., z_L)`` (or just ``1``) multiplying ``A_l``."""
        z = np.asarray(z, dtype=float)
        one = np.ones(z.shape[:-1] + (1,))
        return np.concatenate([one, z], axis=-1) if self.interactions else one

    def price_matrix(self, z):
        """``sum_l z_l A_l`` with ``z_0 = 1``."""
        return np.einsum("...l,ljk->...jk", self.demographic_weights(z), self.A)

    def invariant_violations(self, tol=1e-12) -> list[str]:
        out = []
        col = self.b.sum(axis=1)
        if abs(col[0] - 1) > tol:
            out.append(f"1'b_0 = {col[0]!r} != 1")
        if self.R and np.max(np.abs(col[1:])) > tol:
            out.append("1'b_r != 0 for some r >= 1")
        for name in ("C", "D"):
            M = getattr(self, name)
            if M.size and np.max(np.abs(M.sum(axis=1))) > tol:
                out.append(f"1'{name} != 0")
        for l, A in enumerate(self.A):
            if np.max(np.abs(A.sum(axis=0))) > tol:
                out.append(f"1'A_{l} != 0")
            if np.max(np.abs(A.sum(axis=1))) > tol:
                out.append(f"A_{l} 1 != 0")
        if np.max(np.abs(self.B.sum(axis=0))) > tol:
            out.append("1'B != 0")
        if np.max(np.abs(self.B.sum(axis=1))) > tol:
            out.append("B 1 != 0")
        return out

    def check(self, tol=1e-12):
        bad = self.invariant_violations(tol)
        if bad:
            raise SchemaError("EASI restrictions violated: " + "; ".join(bad))
        return self

    # serialisation -----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": PARAMS_FORMAT,
            "J": self.J,
            "L": self.L,
            "R": self.R,
            "interactions": self.interactions,
            "goods": list(self.goods),
            "demographics": list(self.demographics),
            "b": self.b.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
            "A_vech": [vech(A).tolist() for A in self.A],
            "B_vech": vech(self.B).tolist(),
            "centering": dict(self.centering),
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EasiParams":
        if d.get("format") != PARAMS_FORMAT:
            raise SchemaError(f"unknown params format {d.get('format')!r}")
        try:
            J, L = int(d["J"]), int(d["L"])
            A = np.stack([unvech(v, J) for v in d["A_vech"]])
            params = cls(
                b=np.array(d["b"], dtype=float).reshape(int(d["R"]) + 1, J),
                C=np.array(d["C"], dtype=float).reshape(L, J),
                D=np.array(d["D"], dtype=float).reshape(L, J),
                A=A,
                B=unvech(d["B_vech"], J),
                goods=tuple(d.get("goods", ())),
                demographics=tuple(d.get("demographics", ())),
                centering=dict(d.get("centering", {})),
                metadata=dict(d.get("metadata", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed params document: {exc}") from exc
        return params

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_json(cls, path) -> "EasiParams":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from exc
        return cls.from_dict(doc)


@dataclass
class Household:
    """One observation.  ``eps`` is only known for synthetic data."""

    w: np.ndarray
    p: np.ndarray
    z: np.ndarray
    x: float
    eps: np.ndarray | None = None
    stratum: Any = None
    weight: float = 1.0
    hid: Any = None
    flags: tuple = ()


@dataclass
class Sample:
    """Column-oriented stack of households, the form used for estimation."""

    w: np.ndarray
    p: np.ndarray
    z: np.ndarray
    x: np.ndarray
    weight: np.ndarray | None = None
    stratum: np.ndarray | None = None
    hid: np.ndarray | None = None
    eps: np.ndarray | None = None
    flags: list | None = None

    def __post_init__(self):
        self.w = np.atleast_2d(np.asarray(self.w, dtype=float))
        n = self.w.shape[0]
        self.p = np.asarray(self.p, dtype=float).reshape(n, -1)
        self.z = np.asarray(self.z, dtype=float).reshape(n, -1)
        self.x = np.asarray(self.x, dtype=float).reshape(n)
        self.weight = np.ones(n) if self.weight is None else np.asarray(self.weight, dtype=float).reshape(n)
        if self.stratum is None:
            self.stratum = np.array([None] * n, dtype=object)
        else:
            self.stratum = np.asarray(self.stratum, dtype=object)
        self.hid = np.arange(n) if self.hid is None else np.asarray(self.hid)
        if self.eps is not None:
            self.eps = np.asarray(self.eps, dtype=float).reshape(n, -1)
        if self.flags is None:
            self.flags = [()] * n
        if self.p.shape != self.w.shape:
            raise SchemaError(f"price block {self.p.shape} does not match shares {self.w.shape}")

    def __len__(self):
        return self.w.shape[0]

    @property
    def J(self):
        return self.w.shape[1]

    @property
    def L(self):
        return self.z.shape[1]

    @classmethod
    def from_households(cls, households: Sequence[Household]) -> "Sample":
        hh = list(households)
        if not hh:
            raise SchemaError("empty household list")
        eps = None
        if all(h.eps is not None for h in hh):
            eps = np.array([h.eps for h in hh])
        return cls(
            w=np.array([h.w for h in hh]),
            p=np.array([h.p for h in hh]),
            z=np.array([np.atleast_1d(h.z) for h in hh]).reshape(len(hh), -1),
            x=np.array([h.x for h in hh]),
            weight=np.array([h.weight for h in hh]),
            stratum=np.array([h.stratum for h in hh], dtype=object),
            hid=np.array([h.hid if h.hid is not None else i for i, h in enumerate(hh)]),
            eps=eps,
            flags=[tuple(h.flags) for h in hh],
        )

    def to_households(self) -> list[Household]:
        return [
            Household(
                w=self.w[i].copy(),
                p=self.p[i].copy(),
                z=self.z[i].copy(),
                x=float(self.x[i]),
                eps=None if self.eps is None else self.eps[i].copy(),
                stratum=self.stratum[i],
                weight=float(self.weight[i]),
                hid=self.hid[i],
                flags=tuple(self.flags[i]),
            )
            for i in range(len(self))
        ]

    def subset(self, mask) -> "Sample":
        idx = np.flatnonzero(np.asarray(mask)) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return Sample(
            w=self.w[idx],
            p=self.p[idx],
            z=self.z[idx],
            x=self.x[idx],
            weight=self.weight[idx],
            stratum=self.stratum[idx],
            hid=self.hid[idx],
            eps=None if self.eps is None else self.eps[idx],
            flags=[self.flags[i] for i in idx],
        )


def as_sample(data) -> Sample:
    if isinstance(data, Sample):
        return data
    return Sample.from_households(data)


@dataclass(frozen=True)
class EvalPoint:
    """Point at which derivative objects are evaluated.

    Exactly one of ``x`` (log nominal expenditure) or ``y`` (implicit
    utility) must be given; the other is derived from the model.
    """

    p: np.ndarray
    z: np.ndarray
    x: float | None = None
    y: float | None = None
    eps: np.ndarray | None = None

    def __post_init__(self):
        if (self.x is None) == (self.y is None):
            raise ValueError("EvalPoint needs exactly one of x or y")

    @property
    def y_given(self) -> bool:
        return self.y is not None

    @classmethod
    def representative(cls, params: EasiParams) -> "EvalPoint":
        """Base prices, centred demographics and median (centred) expenditure."""
        return cls(p=np.zeros(params.J), z=np.zeros(params.L), x=0.0)


# --------------------------------------------------------------------------
# core functions


def _eps(eps, shape):
    return np.zeros(shape) if eps is None else np.asarray(eps, dtype=float)


def price_denominator(p, params: EasiParams):
    """``1 - p'Bp/2``."""
    p = np.asarray(p, dtype=float)
    return 1.0 - 0.5 * np.einsum("...j,jk,...k->...", p, params.B, p)


def price_quadratic(p, z, params: EasiParams):
    """``sum_l z_l p'A_l p`` (with ``z_0 = 1``)."""
    p = np.asarray(p, dtype=float)
    return np.einsum("...j,...jk,...k->...", p, params.price_matrix(z), p)


def _checked_denominator(p, params):
    den = price_denominator(p, params)
    if np.any(np.abs(den) < DENOMINATOR_EPS):
        raise DegenerateDenominator("|1 - p'Bp/2| < 1e-12")
    return den


def implicit_utility(x, p, w, z, params: EasiParams):
    """Implicit utility from observed log expenditure, log prices and shares."""
    p = np.asarray(p, dtype=float)
    w = np.asarray(w, dtype=float)
    den = _checked_denominator(p, params)
    num = np.asarray(x, dtype=float) - np.sum(p * w, axis=-1) + 0.5 * price_quadratic(p, z, params)
    return num / den


def hicksian_shares(y, p, z, eps, params: EasiParams):
    """Compensated budget shares at utility ``y``."""
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    z = np.asarray(z, dtype=float)
    yy = y[..., None]
    powers = yy ** np.arange(params.R + 1)
    w = powers @ params.b
    w = w + z @ params.C + (z @ params.D) * yy
    w = w + np.einsum("...jk,...k->...j", params.price_matrix(z), p)
    w = w + (p @ params.B) * yy
    return w + _eps(eps, w.shape)


def share_y_gradient(y, p, z, params: EasiParams):
    """Derivative of the Hicksian shares with respect to ``y``."""
    y = np.asarray(y, dtype=float)
    yy = y[..., None]
    r = np.arange(1, params.R + 1)
    dpow = r * yy ** (r - 1) if params.R else np.zeros(y.shape + (0,))
    g = dpow @ params.b[1:]
    return g + np.asarray(z, dtype=float) @ params.D + np.asarray(p, dtype=float) @ params.B


def log_cost(u, p, z, eps, params: EasiParams):
    """Log cost of reaching utility ``u`` at log prices ``p``."""
    u = np.asarray(u, dtype=float)
    p = np.asarray(p, dtype=float)
    w = hicksian_shares(u, p, z, eps, params)
    return u * price_denominator(p, params) + np.sum(p * w, axis=-1) - 0.5 * price_quadratic(p, z, params)


def cost_monotonicity_margin(y, p, z, params: EasiParams):
    """``1 + p'[sum_r r b_r y^(r-1) + D'z + Bp/2]``; must be positive."""
    p = np.asarray(p, dtype=float)
    v = share_y_gradient(y, p, z, params) - 0.5 * (p @ params.B)
    return 1.0 + np.sum(p * v, axis=-1)


def solve_marshallian_shares(
    x,
    p,
    z,
    eps,
    params: EasiParams,
    *,
    w_start=None,
    damping=0.5,
    tol=1e-12,
    max_iter=200,
    polish=True,
):
    """Solve the implicit Marshallian system for ``(w, y)``.

    Only ``y`` is iterated (shares are polynomial in ``y``): a damped fixed
    point started at the Stone-deflated expenditure ``x - p'w_start`` (or
    ``x - p'b_0``), stopped when ``|dy| < tol``.  A few Newton steps then
    polish ``y`` to round-off so that finite differences of the solution are
    usable.

    Raises
    ------
    NoConvergence
        ``indices`` holds the offending positions for batched input.
    DegenerateDenominator
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    z = np.asarray(z, dtype=float)
    den = _checked_denominator(p, params)
    half_quad = 0.5 * price_quadratic(p, z, params)
    w0 = params.b[0] if w_start is None else np.asarray(w_start, dtype=float)
    y = x - np.sum(p * w0, axis=-1)

    def stone_map(y):
        w = hicksian_shares(y, p, z, eps, params)
        return (x - np.sum(p * w, axis=-1) + half_quad) / den

    for _ in range(max_iter):
        y_new = y + damping * (stone_map(y) - y)
        step = np.abs(y_new - y)
        y = y_new
        if not np.all(np.isfinite(y)):
            bad = np.flatnonzero(~np.isfinite(np.atleast_1d(y)))
            raise NoConvergence("implicit utility diverged", indices=bad)
        if np.all(step < tol):
            break
    else:
        bad = np.flatnonzero(np.atleast_1d(step) >= tol)
        raise NoConvergence(f"no convergence after {max_iter} iterations", indices=bad)

    if polish:
        for _ in range(3):
            resid = y - stone_map(y)
            slope = 1.0 + np.sum(p * share_y_gradient(y, p, z, params), axis=-1) / den
            delta = resid / slope
            y = y - delta
            if np.all(np.abs(delta) <= 4e-16 * np.maximum(1.0, np.abs(y))):
                break

    w = hicksian_shares(y, p, z, eps, params)
    return w, (float(y) if np.ndim(y) == 0 else y)
