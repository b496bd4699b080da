"""Survey and tariff ingestion: fixed charges, block-tariff inversion, shares and log prices.

Money inside this module is in USD after conversion; the CSV readers take
Colombian pesos and divide by the exchange rate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ImputationError, SchemaError
from .model import Household, Sample

FX_COP_PER_USD = 3038.26
UTILITIES = ("electricity", "water", "sewerage", "gas")
SHORT = {"electricity": "elec", "water": "water", "sewerage": "sewer", "gas": "gas"}
DEMOGRAPHICS = ("age_head", "male_head", "members", "educ")
MASL_BANDS = ("<1000", "1000-2000", ">2000")
# basic-consumption ceiling and complementary cap (m3) per altitude band
WATER_BLOCKS = {"<1000": (16.0, 32.0), "1000-2000": (13.0, 26.0), ">2000": (11.0, 22.0)}

HOUSEHOLD_COLUMNS = (
    "hid,stratum,municipality,masl_band,age_head,male_head,members,educ,exp_elec,exp_water,"
    "exp_sewer,exp_gas,fixed_water,fixed_sewer,fixed_gas,total_income,survey_month,weight"
).split(",")
TARIFF_COLUMNS = "utility,provider,stratum,masl_band,fixed_charge,block1_ub,block1_p,block2_ub,block2_p,block3_p".split(",")
PROVIDER_COLUMNS = ["municipality", "utility", "provider", "subscribers"]


def normalize_band(band):
    if band is None or (isinstance(band, float) and math.isnan(band)) or str(band).strip() == "":
        return None
    b = str(band).strip().replace("–", "-").replace(" ", "")
    if b not in MASL_BANDS:
        raise SchemaError(f"unknown altitude band {band!r}; expected one of {MASL_BANDS}")
    return b


@dataclass(frozen=True)
class TariffSchedule:
    """Increasing-block tariff.

    ``blocks`` is a sequence of ``(upper_bound, marginal_price)`` pairs; the
    last upper bound is ``None`` (unbounded).  Money in USD.
    """

    utility: str
    provider: str
    stratum: int
    blocks: tuple
    fixed_charge: float = 0.0
    masl_band: str | None = None

    def __post_init__(self):
        if self.utility not in UTILITIES:
            raise SchemaError(f"unknown utility {self.utility!r}")
        blocks = tuple((None if ub is None else float(ub), float(pr)) for ub, pr in self.blocks)
        if not blocks:
            raise SchemaError("tariff schedule has no blocks")
        if blocks[-1][0] is not None:
            raise SchemaError("last tariff block must be unbounded")
        ubs = [ub for ub, _ in blocks[:-1]]
        if any(ub is None for ub in ubs):
            raise SchemaError("only the last block may be unbounded")
        if any(not math.isfinite(ub) or ub <= 0 for ub in ubs) or any(b <= a for a, b in zip(ubs, ubs[1:])):
            raise SchemaError(f"block upper bounds must be positive and strictly increasing: {ubs}")
        if any(not (pr > 0 and math.isfinite(pr)) for _, pr in blocks):
            raise SchemaError("marginal prices must be positive")
        if self.fixed_charge < 0:
            raise SchemaError("fixed charge must be >= 0")
        if self.utility == "electricity" and self.fixed_charge != 0:
            raise SchemaError("electricity schedules carry no fixed charge")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "masl_band", normalize_band(self.masl_band))

    @property
    def lower_bounds(self):
        return [0.0] + [ub for ub, _ in self.blocks[:-1]]

    def bill(self, Q):
        """Variable charge for consumption ``Q``."""
        if Q < 0:
            raise ValueError("negative consumption")
        total = 0.0
        for lb, (ub, pr) in zip(self.lower_bounds, self.blocks):
            hi = Q if ub is None else min(Q, ub)
            if hi <= lb:
                break
            total += pr * (hi - lb)
        return total


def cra_water_schedule(masl_band, basic, complementary, luxury, provider="", stratum=4, fixed_charge=0.0, utility="water"):
    """Three-block water/sewerage schedule with the altitude-dependent ranges."""
    band = normalize_band(masl_band)
    ub1, ub2 = WATER_BLOCKS[band]
    return TariffSchedule(utility, provider, stratum, ((ub1, basic), (ub2, complementary), (None, luxury)), fixed_charge, band)


def variable_expenditure(E, F):
    """``V = max(E - F, 0)`` and a flag that is true where ``E < F``."""
    E = np.asarray(E, dtype=float)
    F = np.asarray(F, dtype=float)
    if np.any(E < 0) or np.any(F < 0):
        raise SchemaError("expenditures and fixed charges must be non-negative")
    V = np.maximum(E - F, 0.0)
    flag = E < F
    if V.ndim == 0:
        return float(V), bool(flag)
    return V, flag


@dataclass(frozen=True)
class Inversion:
    Q: float
    avg_price: float
    zero_quantity: bool = False

    def __iter__(self):
        return iter((self.Q, self.avg_price))


def invert_block_tariff(V, schedule: TariffSchedule) -> Inversion:
    """Consumption whose variable bill is ``V``, and the implied average price.

    The bill is continuous and strictly increasing in consumption, so the
    inverse is unique.  ``V = 0`` returns zero consumption priced at the
    first block.
    """
    if not isinstance(schedule, TariffSchedule):
        raise SchemaError("schedule must be a TariffSchedule")
    V = float(V)
    if V < 0 or not math.isfinite(V):
        raise ValueError(f"variable expenditure must be finite and >= 0, got {V}")
    if V == 0:
        return Inversion(0.0, schedule.blocks[0][1], True)
    cost = 0.0
    for lb, (ub, pr) in zip(schedule.lower_bounds, schedule.blocks):
        block_cost = math.inf if ub is None else pr * (ub - lb)
        if V <= cost + block_cost:
            Q = lb + (V - cost) / pr
            return Inversion(Q, V / Q, False)
        cost += block_cost
    raise AssertionError("unreachable: last block is unbounded")


@dataclass
class RawExpenditureRecord:
    """One survey household; money in COP as read from disk."""

    hid: object
    stratum: int
    municipality: str
    masl_band: str | None
    demographics: dict
    expenditure: dict  # utility -> E
    fixed: dict  # utility -> F (missing entries fall back to the schedule)
    total_income: float = float("nan")
    survey_month: str = ""
    weight: float = 1.0

    def __post_init__(self):
        for u, E in self.expenditure.items():
            if not E >= 0:
                raise SchemaError(f"household {self.hid}: negative {u} expenditure")


@dataclass
class ProviderMap:
    """Dominant provider per (municipality, utility)."""

    table: dict = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows):
        best = {}
        for mun, util, prov, subs in rows:
            key = (str(mun), str(util))
            cand = (-float(subs), str(prov))
            if key not in best or cand < best[key]:
                best[key] = cand
        return cls({k: v[1] for k, v in best.items()})

    def provider(self, municipality, utility):
        return self.table.get((str(municipality), utility))


@dataclass
class IngestResult:
    households: list  # analysis set (Household)
    raw: pd.DataFrame  # every record with V, Q, average prices and flags
    exclusions: dict
    goods: tuple
    demographics: tuple
    centering: dict

    def sample(self) -> Sample:
        return Sample.from_households(self.households)


def _schedule_index(schedules):
    idx = {}
    for s in schedules:
        idx[(s.utility, str(s.provider), int(s.stratum), s.masl_band)] = s
    return idx


def _match(idx, providers, rec, utility):
    if providers is None:
        # no provider table: the schedule must be unique for the stratum and band
        cands = [s for (u, p, st, b), s in idx.items() if u == utility and st == int(rec.stratum) and b in (rec.masl_band, None)]
        cands.sort(key=lambda s: (s.masl_band is None, s.provider))
        return cands[0] if cands else None
    prov = providers.provider(rec.municipality, utility)
    if prov is None:
        return None
    for band in (rec.masl_band, None):
        s = idx.get((utility, str(prov), int(rec.stratum), band))
        if s is not None:
            return s
    return None


def build_households(
    records: Sequence[RawExpenditureRecord],
    schedules: Sequence[TariffSchedule],
    fx_rate: float = FX_COP_PER_USD,
    deflators: Mapping[str, float] | None = None,
    providers: ProviderMap | None = None,
    utilities: Sequence[str] = UTILITIES,
    representative: dict | None = None,
) -> IngestResult:
    """Turn raw survey records into model-ready households.

    Expenditures are converted at ``fx_rate`` COP/USD and divided by the
    month's deflator (identity when absent).  Households with any zero
    variable expenditure, or whose fixed charge exceeds the bill, are kept
    in ``raw`` but left out of the analysis set.

    Log prices are measured relative to the representative household's
    average tariffs and demographics and log expenditure are centred at it.
    By default the representative household is the element-wise median of
    the analysis set; pass ``representative={"prices": .., "z": .., "x": ..}``
    to override.
    """
    if not fx_rate > 0:
        raise ValueError("fx_rate must be positive")
    deflators = dict(deflators or {})
    idx = _schedule_index(schedules)
    missing = []
    rows = []
    for rec in records:
        row = {"hid": rec.hid, "stratum": rec.stratum, "weight": rec.weight, "flags": []}
        d = float(deflators.get(str(rec.survey_month), 1.0))
        for u in utilities:
            sched = _match(idx, providers, rec, u)
            if sched is None:
                missing.append((rec.municipality, u))
                continue
            E = float(rec.expenditure.get(u, 0.0)) / fx_rate / d
            F_cop = rec.fixed.get(u)
            if F_cop is None or (isinstance(F_cop, float) and math.isnan(F_cop)):
                F = sched.fixed_charge / d
            else:
                F = float(F_cop) / fx_rate / d
            if u == "electricity":
                F = 0.0
            V, under = variable_expenditure(E, F)
            inv = invert_block_tariff(V, sched)
            k = SHORT[u]
            row.update({f"E_{k}": E, f"F_{k}": F, f"V_{k}": V, f"Q_{k}": inv.Q, f"P_{k}": inv.avg_price})
            if under:
                row["flags"].append(f"fixed_exceeds_bill:{u}")
            if inv.zero_quantity:
                row["flags"].append(f"zero_share:{u}")
        for name in DEMOGRAPHICS:
            row[name] = float(rec.demographics.get(name, np.nan))
        rows.append(row)
    if missing:
        raise ImputationError(missing)

    raw = pd.DataFrame(rows)
    keys = [SHORT[u] for u in utilities]
    V = raw[[f"V_{k}" for k in keys]].to_numpy(float)
    P = raw[[f"P_{k}" for k in keys]].to_numpy(float)
    Z = raw[list(DEMOGRAPHICS)].to_numpy(float)
    excluded_zero = np.any(V <= 0, axis=1)
    excluded_under = np.array([any(f.startswith("fixed_exceeds_bill") for f in fl) for fl in raw["flags"]])
    keep = ~(excluded_zero | excluded_under)
    raw["analysis"] = keep
    if not keep.any():
        raise SchemaError("no household survives the zero-share exclusion")

    total = V.sum(axis=1)
    logx = np.log(np.where(total > 0, total, np.nan))
    rep = representative or {}
    ref_p = np.asarray(rep.get("prices", np.median(P[keep], axis=0)), dtype=float)
    ref_z = np.asarray(rep.get("z", np.median(Z[keep], axis=0)), dtype=float)
    ref_x = float(rep.get("x", np.median(logx[keep])))

    households = []
    for i in np.flatnonzero(keep):
        households.append(
            Household(
                w=V[i] / total[i],
                p=np.log(P[i] / ref_p),
                z=Z[i] - ref_z,
                x=logx[i] - ref_x,
                stratum=raw["stratum"].iat[i],
                weight=float(raw["weight"].iat[i]),
                hid=raw["hid"].iat[i],
            )
        )
    exclusions = {
        "records": int(len(raw)),
        "analysis": int(keep.sum()),
        "zero_share": int(excluded_zero.sum()),
        "fixed_exceeds_bill": int(excluded_under.sum()),
        "excluded_hids": raw.loc[~keep, "hid"].tolist(),
    }
    centering = {
        "prices_usd": ref_p.tolist(),
        "z": ref_z.tolist(),
        "x": ref_x,
        "fx_rate": fx_rate,
    }
    return IngestResult(households, raw, exclusions, tuple(keys), DEMOGRAPHICS, centering)


# --------------------------------------------------------------------------
# file formats


def _require(df, cols, path):
    miss = [c for c in cols if c not in df.columns]
    if miss:
        raise SchemaError(f"{path}: missing columns {miss}")


def read_households_csv(path) -> list[RawExpenditureRecord]:
    df = pd.read_csv(path, dtype={"hid": str, "municipality": str, "survey_month": str, "masl_band": str})
    _require(df, HOUSEHOLD_COLUMNS, path)
    out = []
    for r in df.itertuples(index=False):
        r = r._asdict()
        out.append(
            RawExpenditureRecord(
                hid=r["hid"],
                stratum=int(r["stratum"]),
                municipality=r["municipality"],
                masl_band=normalize_band(r["masl_band"]),
                demographics={k: float(r[k]) for k in DEMOGRAPHICS},
                expenditure={u: float(r[f"exp_{SHORT[u]}"]) for u in UTILITIES},
                fixed={u: float(r[f"fixed_{SHORT[u]}"]) for u in ("water", "sewerage", "gas")},
                total_income=float(r["total_income"]),
                survey_month=str(r["survey_month"]),
                weight=float(r["weight"]),
            )
        )
    return out


def read_tariffs_csv(path, fx_rate=FX_COP_PER_USD) -> list[TariffSchedule]:
    df = pd.read_csv(path, dtype={"provider": str, "masl_band": str})
    _require(df, TARIFF_COLUMNS, path)
    out = []
    for r in df.to_dict("records"):

        def num(k):
            v = r.get(k)
            return None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)

        ub1, p1, ub2, p2, p3 = (num(k) for k in ("block1_ub", "block1_p", "block2_ub", "block2_p", "block3_p"))
        if p1 is None:
            raise SchemaError(f"{path}: block1_p is required")
        prices = [p1] + [p for p in (p2, p3) if p is not None]
        bounds = [b for b in (ub1, ub2) if b is not None][: len(prices) - 1]
        if len(bounds) != len(prices) - 1:
            raise SchemaError(f"{path}: block bounds and prices do not line up for provider {r['provider']}")
        blocks = tuple(zip(bounds + [None], [p / fx_rate for p in prices]))
        out.append(
            TariffSchedule(
                utility=str(r["utility"]).strip(),
                provider=str(r["provider"]),
                stratum=int(r["stratum"]),
                blocks=blocks,
                fixed_charge=(num("fixed_charge") or 0.0) / fx_rate,
                masl_band=r.get("masl_band"),
            )
        )
    return out


def read_providers_csv(path) -> ProviderMap:
    df = pd.read_csv(path, dtype={"municipality": str, "provider": str})
    _require(df, PROVIDER_COLUMNS, path)
    return ProviderMap.from_rows(df[PROVIDER_COLUMNS].itertuples(index=False, name=None))


def read_deflators_csv(path) -> dict:
    df = pd.read_csv(path, dtype={"survey_month": str})
    _require(df, ["survey_month", "deflator"], path)
    return dict(zip(df["survey_month"], df["deflator"].astype(float)))


def sample_frame(sample: Sample) -> pd.DataFrame:
    J, L = sample.J, sample.L
    cols = {"hid": sample.hid, "stratum": sample.stratum}
    cols.update({f"w{j + 1}": sample.w[:, j] for j in range(J)})
    cols.update({f"p{j + 1}": sample.p[:, j] for j in range(J)})
    cols.update({f"z{l + 1}": sample.z[:, l] for l in range(L)})
    cols["x"] = sample.x
    cols["weight"] = sample.weight
    return pd.DataFrame(cols)


def write_model_csv(sample: Sample, path):
    sample_frame(sample).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def read_model_csv(path) -> Sample:
    df = pd.read_csv(path, dtype={"hid": str, "stratum": str}, float_precision="round_trip")
    ws = sorted((c for c in df.columns if c[0] == "w" and c[1:].isdigit()), key=lambda c: int(c[1:]))
    ps = sorted((c for c in df.columns if c[0] == "p" and c[1:].isdigit()), key=lambda c: int(c[1:]))
    zs = sorted((c for c in df.columns if c[0] == "z" and c[1:].isdigit()), key=lambda c: int(c[1:]))
    _require(df, ["hid", "stratum", "x", "weight"], path)
    if not ws or len(ws) != len(ps):
        raise SchemaError(f"{path}: need matching w1..wJ and p1..pJ columns")
    return Sample(
        w=df[ws].to_numpy(float),
        p=df[ps].to_numpy(float),
        z=df[zs].to_numpy(float) if zs else np.zeros((len(df), 0)),
        x=df["x"].to_numpy(float),
        weight=df["weight"].to_numpy(float),
        stratum=df["stratum"].to_numpy(object),
        hid=df["hid"].to_numpy(object),
    )


def write_exclusions(result: IngestResult, path):
    Path(path).write_text(json.dumps(result.exclusions, indent=2, default=str) + "\n")
