"""Iterated linear 3SLS for the EASI system with the theory restrictions imposed.

The system is written in free ("restricted") coordinates:

* adding-up: the equation of the omitted good is dropped and its
  coefficients are recovered as minus the sum of the others;
* homogeneity: prices enter as differences ``p_k - p_J`` from the omitted
  good's log price;
* symmetry: each price matrix contributes only its half-vectorised
  ``(J-1) x (J-1)`` upper triangle.

Free coefficient order: one block per retained equation
``[b_0 .. b_R, C_1 .. C_L, D_1 .. D_L]``, then ``vech(A_0)``,
``vech(A_1) .. vech(A_L)`` (interactions only) and ``vech(B)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NoConvergence, SingularMoments
from .model import EasiParams, Household, Sample, as_sample, implicit_utility


@dataclass
class FitConfig:
    R: int = 5
    include_price_demographic_interactions: bool = False
    y_tolerance: float = 1e-8
    max_outer_iterations: int = 100
    ridge: float = 0.0
    omit: int | None = None  # index of the dropped equation; default last good

    def __post_init__(self):
        if not 1 <= self.R <= 5:
            raise ValueError("R must be in 1..5")
        if self.y_tolerance <= 0 or self.max_outer_iterations < 1 or self.ridge < 0:
            raise ValueError("tolerances must be positive and ridge non-negative")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "interactions" in d:
            d["include_price_demographic_interactions"] = d.pop("interactions")
        return cls(**d)

    def to_dict(self):
        return {
            "R": self.R,
            "include_price_demographic_interactions": self.include_price_demographic_interactions,
            "y_tolerance": self.y_tolerance,
            "max_outer_iterations": self.max_outer_iterations,
            "ridge": self.ridge,
            "omit": self.omit,
        }


@dataclass
class Layout:
    """Index bookkeeping for the free coefficient vector."""

    J: int
    L: int
    R: int
    interactions: bool
    omit: int

    @property
    def m(self):
        return self.J - 1

    @property
    def order(self):
        """Goods permuted so the omitted good comes last."""
        return [j for j in range(self.J) if j != self.omit] + [self.omit]

    @property
    def k_eq(self):
        return self.R + 1 + 2 * self.L

    @property
    def n_vech(self):
        return self.m * (self.m + 1) // 2

    @property
    def n_A(self):
        return 1 + (self.L if self.interactions else 0)

    @property
    def K(self):
        return self.m * self.k_eq + self.n_vech * (self.n_A + 1)

    def a_slice(self, l):
        start = self.m * self.k_eq + l * self.n_vech
        return slice(start, start + self.n_vech)

    @property
    def b_slice(self):
        return self.a_slice(self.n_A)

    def names(self, goods, demos):
        g = [goods[j] for j in self.order]
        out = []
        for j in range(self.m):
            out += [f"b{r}[{g[j]}]" for r in range(self.R + 1)]
            out += [f"C[{d},{g[j]}]" for d in demos]
            out += [f"D[{d},{g[j]}]" for d in demos]
        iu = np.triu_indices(self.m)
        for l in range(self.n_A):
            out += [f"A{l}[{g[a]},{g[b]}]" for a, b in zip(*iu)]
        out += [f"B[{g[a]},{g[b]}]" for a, b in zip(*iu)]
        return out


def _layout(J, L, config: FitConfig) -> Layout:
    omit = J - 1 if config.omit is None else int(config.omit)
    if not 0 <= omit < J:
        raise ValueError(f"omit index {omit} out of range")
    return Layout(J, L, config.R, config.include_price_demographic_interactions, omit)


def _relative_prices(p, lay: Layout):
    p = p[:, lay.order]
    return p[:, :-1] - p[:, -1:]


def _sample(data):
    if isinstance(data, Household):
        return Sample.from_households([data])
    return as_sample(data)


def stone_instrument(sample, w_bar):
    """``x - p'w_bar``: expenditure deflated by a common Stone index."""
    s = _sample(sample)
    return s.x - s.p @ np.asarray(w_bar, dtype=float)


def build_instruments(data, w_bar, config: FitConfig):
    """Instrument matrix, one row per household.

    Columns: ``1, yt, .., yt^R, z, z*yt, pt, pt*yt`` and, with interactions,
    ``z_l * pt`` for each ``l``; ``yt = x - p'w_bar`` and ``pt`` are the
    log-price differences from the omitted good.
    """
    s = _sample(data)
    lay = _layout(s.J, s.L, config)
    yt = stone_instrument(s, w_bar)
    pt = _relative_prices(s.p, lay)
    cols = [yt[:, None] ** np.arange(lay.R + 1), s.z, s.z * yt[:, None], pt, pt * yt[:, None]]
    if lay.interactions:
        cols += [s.z[:, [l]] * pt for l in range(lay.L)]
    return np.hstack(cols)


def _vech_columns(pt, j, m):
    """Columns of equation ``j`` that multiply ``vech`` of a symmetric matrix."""
    iu = np.triu_indices(m)
    cols = np.zeros((pt.shape[0], len(iu[0])))
    for c, (a, b) in enumerate(zip(*iu)):
        if a == j:
            cols[:, c] += pt[:, b]
        if b == j and a != b:
            cols[:, c] += pt[:, a]
    return cols


def build_design(y_hat, data, config: FitConfig):
    """Stacked regressors in free coordinates, shape ``(J-1, n, K)``."""
    s = _sample(data)
    lay = _layout(s.J, s.L, config)
    y = np.broadcast_to(np.asarray(y_hat, dtype=float), (len(s),))
    pt = _relative_prices(s.p, lay)
    n = len(s)
    X = np.zeros((lay.m, n, lay.K))
    own = np.hstack([y[:, None] ** np.arange(lay.R + 1), s.z, s.z * y[:, None]])
    for j in range(lay.m):
        X[j, :, j * lay.k_eq:(j + 1) * lay.k_eq] = own
        V = _vech_columns(pt, j, lay.m)
        X[j, :, lay.a_slice(0)] = V
        for l in range(1, lay.n_A):
            X[j, :, lay.a_slice(l)] = V * s.z[:, [l - 1]]
        X[j, :, lay.b_slice] = V * y[:, None]
    return X


def _complete(top):
    """Fill in the omitted row/column of a homogeneous symmetric matrix."""
    m = top.shape[0]
    M = np.zeros((m + 1, m + 1))
    M[:m, :m] = top
    M[:m, m] = M[m, :m] = -top.sum(axis=1)
    M[m, m] = top.sum()
    return M


def reconstruct_params(theta, layout: Layout, goods=(), demographics=(), metadata=None) -> EasiParams:
    """Map free coefficients to a full :class:`EasiParams` (restrictions hold by construction)."""
    theta = np.asarray(theta, dtype=float)
    lay = layout
    J, L, R, m = lay.J, lay.L, lay.R, lay.m
    blocks = theta[: m * lay.k_eq].reshape(m, lay.k_eq)
    b = np.zeros((R + 1, J))
    C = np.zeros((L, J))
    D = np.zeros((L, J))
    b[:, :m] = blocks[:, : R + 1].T
    C[:, :m] = blocks[:, R + 1 : R + 1 + L].T
    D[:, :m] = blocks[:, R + 1 + L :].T
    b[:, m] = -b[:, :m].sum(axis=1)
    b[0, m] += 1.0
    C[:, m] = -C[:, :m].sum(axis=1)
    D[:, m] = -D[:, :m].sum(axis=1)
    iu = np.triu_indices(m)

    def sym(v):
        T = np.zeros((m, m))
        T[iu] = v
        return _complete(T + np.triu(T, 1).T)

    A = np.stack([sym(theta[lay.a_slice(l)]) for l in range(lay.n_A)])
    B = sym(theta[lay.b_slice])
    inv = np.argsort(lay.order)
    return EasiParams(
        b=b[:, inv],
        C=C[:, inv],
        D=D[:, inv],
        A=A[:, inv][:, :, inv],
        B=B[inv][:, inv],
        goods=tuple(goods),
        demographics=tuple(demographics),
        metadata=dict(metadata or {}),
    )


def free_coefficients(params: EasiParams, layout: Layout):
    """Inverse of :func:`reconstruct_params` (reads the retained entries)."""
    lay = layout
    o = lay.order
    keep = o[:-1]
    blocks = np.hstack([params.b[:, keep].T, params.C[:, keep].T, params.D[:, keep].T])
    iu = np.triu_indices(lay.m)
    parts = [blocks.ravel()]
    A = params.A if lay.interactions else params.A[:1]
    for Al in A:
        parts.append(Al[np.ix_(keep, keep)][iu])
    parts.append(params.B[np.ix_(keep, keep)][iu])
    return np.concatenate(parts)


def full_vector(params: EasiParams):
    return np.concatenate([params.b.ravel(), params.C.ravel(), params.D.ravel(), params.A.ravel(), params.B.ravel()])


@dataclass
class StepResult:
    theta: np.ndarray
    vcov: np.ndarray
    min_singular_value: float
    condition: float
    ridge_applied: bool


def three_sls_step(X, W, H, Sigma, weights=None, ridge=0.0) -> StepResult:
    """One linear 3SLS solve of the stacked system ``W[:, j] = X[j] theta + e_j``.

    Parameters
    ----------
    X : (m, n, K) regressors per equation.
    W : (n, m) dependent shares.
    H : (n, q) common instruments.
    Sigma : (m, m) cross-equation error covariance used for weighting.
    weights : (n,) survey weights, normalised internally to mean one.

    Returns the GMM estimate with weighting ``Sigma^{-1} (x) (H'H)^{-1}``
    and the matching covariance ``[X'(Sigma^{-1} (x) P_H) X]^{-1}``.
    """
    X = np.asarray(X, dtype=float)
    W = np.asarray(W, dtype=float)
    H = np.asarray(H, dtype=float)
    m, n, K = X.shape
    om = np.ones(n) if weights is None else np.asarray(weights, dtype=float) * n / np.sum(weights)
    Hw = H * om[:, None]
    M = H.T @ Hw
    G = np.einsum("nh,jnk->jhk", Hw, X)
    hw = Hw.T @ W  # (q, m)
    ridge_applied = False
    try:
        cM = np.linalg.cond(M)
    except np.linalg.LinAlgError:
        cM = np.inf
    if not np.isfinite(cM) or cM > 1e14:
        if ridge <= 0:
            raise SingularMoments(f"instrument moment matrix is singular (cond {cM:.3g})")
        M = M + ridge * np.trace(M) / len(M) * np.eye(len(M))
        ridge_applied = True
    Si = np.linalg.inv(np.asarray(Sigma, dtype=float))
    MiG = np.linalg.solve(M, G.transpose(1, 0, 2).reshape(len(M), m * K)).reshape(len(M), m, K)
    Mihw = np.linalg.solve(M, hw)
    lhs = np.einsum("jk,hja,hkb->ab", Si, G.transpose(1, 0, 2), MiG)
    rhs = np.einsum("jk,hja,hk->a", Si, G.transpose(1, 0, 2), Mihw)
    lhs = 0.5 * (lhs + lhs.T)
    sv = np.linalg.svd(lhs, compute_uv=False)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if not np.isfinite(cond) or cond > 1e14:
        if ridge <= 0:
            raise SingularMoments(f"projected design is rank deficient (smallest singular value {sv[-1]:.3g})")
        lhs = lhs + ridge * np.trace(lhs) / K * np.eye(K)
        ridge_applied = True
    theta = np.linalg.solve(lhs, rhs)
    vcov = np.linalg.inv(lhs)
    vcov = 0.5 * (vcov + vcov.T)
    return StepResult(theta, vcov, float(sv[-1]), float(cond), ridge_applied)


@dataclass
class FitResult:
    params: EasiParams
    vcov: np.ndarray
    theta: np.ndarray
    layout: Layout
    outer_iterations: int
    y_path_norms: list
    sigma: np.ndarray
    y: np.ndarray
    coef_names: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def diagnostics_dict(self):
        return {
            "outer_iterations": self.outer_iterations,
            "y_path_norms": list(map(float, self.y_path_norms)),
            "sigma": np.asarray(self.sigma).tolist(),
            "coef_names": list(self.coef_names),
            "free_coefficients": self.theta.tolist(),
            "standard_errors": np.sqrt(np.clip(np.diag(self.vcov), 0, None)).tolist(),
            **self.diagnostics,
        }


def _sigma_for_weighting(sigma):
    eig = np.linalg.eigvalsh(sigma)
    if eig[-1] <= 1e-14 or eig[0] / eig[-1] < 1e-10:
        return np.eye(len(sigma)), True
    return sigma, False


def fit(data, config: FitConfig | None = None, goods=(), demographics=(), centering=None) -> FitResult:
    """Estimate EASI parameters by iterated 3SLS.

    The outer loop starts from the Stone-deflated expenditure ``x - p'w``,
    alternates a 3SLS solve with an update of every household's implicit
    utility from the fitted price matrices, and re-estimates the residual
    covariance each round.  It stops when ``max |dy| < y_tolerance``.
    """
    config = config or FitConfig()
    s = _sample(data)
    n, J, L = len(s), s.J, s.L
    lay = _layout(J, L, config)
    if n <= lay.K:
        raise DataError(f"need more than {lay.K} households, got {n}")
    om = s.weight * n / s.weight.sum()
    if L:
        zmean = om @ s.z / n
        zsd = np.sqrt(om @ (s.z - zmean) ** 2 / n)
        const = np.flatnonzero(zsd < 1e-12)
        if const.size:
            raise DataError(f"demographic columns {const.tolist()} are constant; drop them before fitting")
    goods = tuple(goods) or tuple(f"good{j + 1}" for j in range(J))
    demographics = tuple(demographics) or tuple(f"z{l + 1}" for l in range(L))
    names = lay.names(goods, demographics)
    keep = lay.order[:-1]
    Wk = s.w[:, keep]
    w_bar = om @ s.w / n
    H = build_instruments(s, w_bar, config)

    y = s.x - np.sum(s.p * s.w, axis=1)
    sigma = np.eye(lay.m)
    norms = []
    min_sv = []
    identity_fallback = False
    step = None
    for it in range(1, config.max_outer_iterations + 1):
        X = build_design(y, s, config)
        sig_used, fb = _sigma_for_weighting(sigma)
        identity_fallback |= fb
        step = three_sls_step(X, Wk, H, sig_used, om, ridge=config.ridge)
        min_sv.append(step.min_singular_value)
        resid = Wk - np.einsum("jnk,k->nj", X, step.theta)
        sigma = (resid * om[:, None]).T @ resid / n
        params = reconstruct_params(step.theta, lay, goods, demographics)
        y_new = implicit_utility(s.x, s.p, s.w, s.z, params)
        dy = float(np.max(np.abs(y_new - y)))
        norms.append(dy)
        y = y_new
        if dy < config.y_tolerance:
            break
    else:
        raise NoConvergence(
            f"outer loop did not converge in {config.max_outer_iterations} iterations; last |dy| {norms[-2:]}",
            history=norms,
        )
    params = reconstruct_params(
        step.theta,
        lay,
        goods,
        demographics,
        metadata={"estimator": "iterated 3SLS", "n": n, "fit_config": config.to_dict()},
    )
    if centering:
        params = EasiParams(params.b, params.C, params.D, params.A, params.B, goods, demographics, dict(centering), params.metadata)
    diagnostics = {
        "n": n,
        "n_free": lay.K,
        "n_instruments": H.shape[1],
        "min_singular_value": min_sv[-1],
        "min_singular_value_path": [float(v) for v in min_sv],
        "design_condition": step.condition,
        "ridge_applied": step.ridge_applied,
        "sigma_identity_fallback": identity_fallback,
        "omitted_good": goods[lay.omit],
    }
    return FitResult(
        params=params,
        vcov=step.vcov,
        theta=step.theta,
        layout=lay,
        outer_iterations=it,
        y_path_norms=norms,
        sigma=sigma,
        y=y,
        coef_names=names,
        diagnostics=diagnostics,
    )


def reconstruction_jacobian(layout: Layout):
    """Linear part ``T`` of the affine map from free coefficients to :func:`full_vector`."""
    base = full_vector(reconstruct_params(np.zeros(layout.K), layout))
    T = np.empty((base.size, layout.K))
    for k in range(layout.K):
        e = np.zeros(layout.K)
        e[k] = 1.0
        T[:, k] = full_vector(reconstruct_params(e, layout)) - base
    return T


def standard_errors(result: FitResult) -> dict:
    """Standard errors laid out like the parameter matrices.

    Retained entries use the free-coefficient covariance directly; entries
    implied by the restrictions get delta-method errors through the
    (affine) reconstruction map.
    """
    p = result.params
    T = reconstruction_jacobian(result.layout)
    V = T @ result.vcov @ T.T
    se = np.sqrt(np.clip(np.diag(V), 0.0, None))
    out = {}
    pos = 0
    for name, shape in (("b", p.b.shape), ("C", p.C.shape), ("D", p.D.shape), ("A", p.A.shape), ("B", p.B.shape)):
        size = int(np.prod(shape))
        out[name] = se[pos : pos + size].reshape(shape)
        pos += size
    out["free"] = np.sqrt(np.clip(np.diag(result.vcov), 0.0, None))
    return out
