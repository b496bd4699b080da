"""Synthetic household populations drawn from a known EASI model.

Random numbers come from fixed-size blocks of households, each with its own
stream derived from ``(seed, block)``.  Output is therefore bit-identical for
a given config no matter how (or whether) the blocks are farmed out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import NoConvergence, SchemaError
from .model import EasiParams, Household, Sample, solve_marshallian_shares

BLOCK_SIZE = 4096


@dataclass
class PriceMarket:
    p: np.ndarray
    stratum: Any = None
    prob: float = 1.0


@dataclass
class SynthConfig:
    """Sampling design for a synthetic population.

    ``z_distribution`` holds one dict per demographic, e.g.
    ``{"kind": "uniform", "low": -1, "high": 1}``,
    ``{"kind": "normal", "mean": 0, "sd": 1}`` or
    ``{"kind": "categorical", "values": [0, 1], "probs": [0.4, 0.6]}``.
    ``share_policy`` is ``"flag"`` (keep out-of-range shares, flag the
    household) or ``"truncate"`` (clip at zero and renormalise).
    """

    N: int
    seed: int = 0
    price_markets: Sequence[PriceMarket] = ()
    x_mean: float = 0.0
    x_sd: float = 0.5
    z_distribution: Sequence[dict] = ()
    eps_sd: float = 0.0
    share_policy: str = "flag"

    def __post_init__(self):
        self.price_markets = [
            m if isinstance(m, PriceMarket) else PriceMarket(**m) if isinstance(m, dict) else PriceMarket(*m)
            for m in self.price_markets
        ]
        if self.N < 1:
            raise SchemaError("N must be positive")
        if self.eps_sd < 0:
            raise SchemaError("eps_sd must be >= 0")
        if self.price_markets:
            total = sum(m.prob for m in self.price_markets)
            if abs(total - 1.0) > 1e-9:
                raise SchemaError(f"market probabilities sum to {total}, not 1")
        if self.share_policy not in ("flag", "truncate"):
            raise SchemaError(f"unknown share_policy {self.share_policy!r}")

    def to_dict(self):
        return {
            "N": self.N,
            "seed": self.seed,
            "price_markets": [
                {"p": np.asarray(m.p, dtype=float).tolist(), "stratum": m.stratum, "prob": m.prob}
                for m in self.price_markets
            ],
            "x_mean": self.x_mean,
            "x_sd": self.x_sd,
            "z_distribution": [dict(d) for d in self.z_distribution],
            "eps_sd": self.eps_sd,
            "share_policy": self.share_policy,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["price_markets"] = [PriceMarket(np.asarray(m["p"], float), m.get("stratum"), m.get("prob", 1.0)) for m in d.get("price_markets", [])]
        return cls(**d)


def _draw_z(rng, columns_cfg, n):
    cols = []
    for col in columns_cfg:
        kind = col.get("kind", "normal")
        if kind == "uniform":
            cols.append(rng.uniform(col.get("low", -1.0), col.get("high", 1.0), n))
        elif kind == "normal":
            cols.append(rng.normal(col.get("mean", 0.0), col.get("sd", 1.0), n))
        elif kind == "categorical":
            vals = np.asarray(col["values"], dtype=float)
            cols.append(vals[rng.choice(len(vals), size=n, p=col.get("probs"))])
        else:
            raise SchemaError(f"unknown demographic distribution {kind!r}")
    return np.column_stack(cols) if cols else np.zeros((n, 0))


def _draw_block(config, params, start, stop):
    n = stop - start
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(start // BLOCK_SIZE,)))
    J = params.J
    markets = config.price_markets or [PriceMarket(np.zeros(J), None, 1.0)]
    probs = np.array([m.prob for m in markets])
    idx = rng.choice(len(markets), size=n, p=probs / probs.sum())
    P = np.array([np.asarray(m.p, dtype=float) for m in markets])[idx]
    strata = np.array([markets[k].stratum for k in idx], dtype=object)
    x = rng.normal(config.x_mean, config.x_sd, n)
    z = _draw_z(rng, config.z_distribution, n)
    if z.shape[1] != params.L:
        raise SchemaError(f"config has {z.shape[1]} demographics, params expect {params.L}")
    eps = np.zeros((n, J))
    if config.eps_sd > 0:
        eps[:, :-1] = rng.normal(0.0, config.eps_sd, (n, J - 1))
        eps[:, -1] = -eps[:, :-1].sum(axis=1)
    return P, strata, x, z, eps


def generate_sample(config: SynthConfig, params: EasiParams) -> Sample:
    """Draw ``config.N`` households and solve their Marshallian shares."""
    params.check(1e-10)
    blocks = [_draw_block(config, params, s, min(s + BLOCK_SIZE, config.N)) for s in range(0, config.N, BLOCK_SIZE)]
    P, strata, x, z, eps = (np.concatenate(parts) for parts in zip(*blocks))
    try:
        w, y = solve_marshallian_shares(x, P, z, eps, params)
    except NoConvergence as exc:
        raise NoConvergence(f"{exc} (households {list(exc.indices)[:10]})", indices=exc.indices) from exc
    y = np.atleast_1d(y)
    flags = [()] * config.N
    bad = np.flatnonzero(np.any((w < 0) | (w > 1), axis=1))
    for i in bad:
        flags[i] = ("share_out_of_range",)
    if config.share_policy == "truncate" and bad.size:
        wt = np.clip(w[bad], 0.0, None)
        w[bad] = wt / wt.sum(axis=1, keepdims=True)
        for i in bad:
            flags[i] = ("share_out_of_range", "truncated")
    return Sample(w=w, p=P, z=z, x=x, weight=np.ones(config.N), stratum=strata, hid=np.arange(config.N), eps=eps, flags=flags)


def generate_population(config: SynthConfig, params: EasiParams) -> list[Household]:
    """List-of-households form of :func:`generate_sample`."""
    return generate_sample(config, params).to_households()


# --------------------------------------------------------------------------
# random parameter sets for tests and demos


def _zero_sum_rows(rng, shape, scale):
    M = rng.normal(0.0, scale, shape)
    return M - M.mean(axis=-1, keepdims=True)


def _homogeneous_symmetric(rng, J, scale):
    M = rng.normal(0.0, scale, (J, J))
    M = 0.5 * (M + M.T)
    Q = np.eye(J) - 1.0 / J
    return Q @ M @ Q


def concave_params(J=3, L=2, R=2, seed=0, alpha=0.5, scale=0.02, interactions=False):
    """Random parameters satisfying every restriction with a concave cost at the base point.

    ``b_0`` is drawn away from the simplex boundary and
    ``A_0 = alpha (diag(b_0) - b_0 b_0')`` with ``alpha < 1``, so the
    normalised Slutsky matrix at ``p = 0, y = 0, z = 0`` equals
    ``(alpha - 1)(diag(b_0) - b_0 b_0')`` and is negative semidefinite.
    """
    rng = np.random.default_rng(seed)
    b0 = rng.dirichlet(np.full(J, 8.0))
    b = np.vstack([b0, _zero_sum_rows(rng, (R, J), scale)])
    A0 = alpha * (np.diag(b0) - np.outer(b0, b0))
    A = [A0]
    if interactions:
        A += [_homogeneous_symmetric(rng, J, scale / 2) for _ in range(L)]
    return EasiParams(
        b=b,
        C=_zero_sum_rows(rng, (L, J), scale),
        D=_zero_sum_rows(rng, (L, J), scale / 2),
        A=np.stack(A),
        B=_homogeneous_symmetric(rng, J, scale),
        metadata={"generator": "concave_params", "seed": seed, "alpha": alpha},
    )


def default_config(N, J, L, seed=0, eps_sd=0.02, n_markets=8, price_sd=0.3, x_sd=0.5):
    """Reasonable recovery design: a handful of price markets, uniform demographics."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31,)))
    markets = [PriceMarket(rng.normal(0.0, price_sd, J), f"m{k}", 1.0 / n_markets) for k in range(n_markets)]
    return SynthConfig(
        N=N,
        seed=seed,
        price_markets=markets,
        x_mean=0.0,
        x_sd=x_sd,
        z_distribution=[{"kind": "uniform", "low": -1.0, "high": 1.0}] * L,
        eps_sd=eps_sd,
    )
