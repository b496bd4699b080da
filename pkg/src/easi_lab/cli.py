"""Command line driver: synth, ingest, fit, elasticities, welfare, optimize, report.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import DataError, NumericalError, SchemaError

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4
BUILTIN_SCENARIOS = ("builtin:colombia", "builtin:colombia-stone", "builtin:quantity-table")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(obj, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def _write_csv(df, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


class Run:
    """Collects inputs, outputs and effective config for the manifest."""

    def __init__(self, args):
        self.args = args
        self.inputs = []
        self.outputs = []
        self.config = {}
        self.seed = None
        self.t0 = time.perf_counter()

    def input(self, path):
        if path and not str(path).startswith("builtin:"):
            self.inputs.append(str(path))
        return path

    def output(self, path):
        if path:
            self.outputs.append(str(path))
        return path

    def manifest(self):
        cfg = json.dumps(self.config, sort_keys=True, default=_json_default)
        return {
            "subcommand": self.args.command,
            "version": __version__,
            "inputs": {p: _sha256(p) for p in self.inputs if Path(p).is_file()},
            "outputs": {p: _sha256(p) for p in self.outputs if Path(p).is_file()},
            "config": json.loads(cfg),
            "config_hash": hashlib.sha256(cfg.encode()).hexdigest(),
            "seed": self.seed,
            "threads": os.environ.get("EASI_LAB_THREADS"),
            "wall_time_s": time.perf_counter() - self.t0,
        }


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args, run):
    from .datagen import SynthConfig, concave_params, default_config, generate_sample
    from .ingest import write_model_csv
    from .model import EasiParams

    if args.params:
        params = EasiParams.from_json(run.input(args.params))
    else:
        params = concave_params(J=args.J, L=args.L, R=args.R, seed=args.params_seed, interactions=args.interactions)
    if args.config:
        cfg = _load_json(run.input(args.config))
        cfg.setdefault("N", args.n)
        cfg.setdefault("seed", args.seed)
        config = SynthConfig.from_dict(cfg)
    else:
        config = default_config(args.n, params.J, params.L, seed=args.seed, eps_sd=args.eps_sd)
    if args.n is not None:
        config.N = args.n
    run.seed = config.seed
    run.config = {"synth": config.to_dict()}
    sample = generate_sample(config, params)
    write_model_csv(sample, run.output(args.out))
    params.to_json(run.output(args.truth))
    flagged = sum(1 for f in sample.flags if f)
    print(f"synth: {len(sample)} households, {flagged} flagged -> {args.out}")


def cmd_ingest(args, run):
    from .ingest import (
        build_households,
        read_deflators_csv,
        read_households_csv,
        read_providers_csv,
        read_tariffs_csv,
        write_exclusions,
        write_model_csv,
    )

    records = read_households_csv(run.input(args.households))
    schedules = read_tariffs_csv(run.input(args.tariffs), fx_rate=args.fx)
    providers = read_providers_csv(run.input(args.providers)) if args.providers else None
    deflators = read_deflators_csv(run.input(args.deflators)) if args.deflators else None
    run.config = {"fx_rate": args.fx}
    res = build_households(records, schedules, fx_rate=args.fx, deflators=deflators, providers=providers)
    write_model_csv(res.sample(), run.output(args.out))
    if args.exclusions:
        write_exclusions(res, run.output(args.exclusions))
    if args.centering:
        _dump_json({"goods": list(res.goods), "demographics": list(res.demographics), **res.centering}, run.output(args.centering))
    if args.raw:
        raw = res.raw.copy()
        raw["flags"] = raw["flags"].map(";".join)
        _write_csv(raw, run.output(args.raw))
    ex = res.exclusions
    print(f"ingest: {ex['analysis']} of {ex['records']} households kept ({ex['zero_share']} zero-share, {ex['fixed_exceeds_bill']} fixed>bill)")


def cmd_fit(args, run):
    from .estimator import FitConfig, fit
    from .ingest import read_model_csv

    cfg = _load_json(run.input(args.config)) if args.config else {}
    for key, val in (("R", args.R), ("omit", args.omit), ("ridge", args.ridge)):
        if val is not None:
            cfg[key] = val
    if args.interactions:
        cfg["include_price_demographic_interactions"] = True
    config = FitConfig.from_dict(cfg)
    run.config = {"fit": config.to_dict()}
    sample = read_model_csv(run.input(args.input))
    goods = tuple(args.goods.split(",")) if args.goods else ()
    demos = tuple(args.demographics.split(",")) if args.demographics else ()
    centering = _load_json(run.input(args.centering)) if args.centering else None
    result = fit(sample, config, goods=goods, demographics=demos, centering=centering)
    result.params.to_json(run.output(args.out))
    if args.diagnostics:
        from .estimator import standard_errors

        diag = result.diagnostics_dict()
        se = standard_errors(result)
        diag["standard_errors_full"] = {k: v.tolist() for k, v in se.items()}
        _dump_json(diag, run.output(args.diagnostics))
    print(f"fit: {result.outer_iterations} outer iterations, final |dy| {result.y_path_norms[-1]:.3g}")


def _eval_point(args, params, run):
    from .ingest import read_model_csv
    from .model import EvalPoint

    if args.at_y is not None:
        return EvalPoint(p=np.zeros(params.J), z=np.zeros(params.L), y=float(args.at_y))
    if args.household is not None:
        if not args.input:
            raise SchemaError("--household requires --input model.csv")
        s = read_model_csv(run.input(args.input))
        idx = np.flatnonzero(s.hid.astype(str) == str(args.household))
        if not idx.size:
            raise SchemaError(f"household {args.household!r} not found")
        i = idx[0]
        return EvalPoint(p=s.p[i], z=s.z[i], x=float(s.x[i]))
    return EvalPoint.representative(params)


def cmd_elasticities(args, run):
    from .elasticity import elasticity_report
    from .model import EasiParams

    params = EasiParams.from_json(run.input(args.params))
    point = _eval_point(args, params, run)
    run.config = {"at": args.at, "household": args.household, "at_y": args.at_y, "form": args.form}
    rep = elasticity_report(point, params, form=args.form)
    _dump_json(rep.to_dict(), run.output(args.out))
    print(f"elasticities: concave={rep.concave}, OPE={np.round(rep.OPE, 4).tolist()}")


def load_scenario(source):
    from .datasets import colombian_electricity_tax_scenario, quantity_table_scenario
    from .welfare import TaxScenario

    if source == "builtin:colombia":
        return colombian_electricity_tax_scenario()
    if source == "builtin:colombia-stone":
        return colombian_electricity_tax_scenario(ev_form="stone")
    if source == "builtin:quantity-table":
        return quantity_table_scenario()
    if str(source).startswith("builtin:"):
        raise SchemaError(f"unknown builtin scenario {source!r}; choose from {BUILTIN_SCENARIOS}")
    try:
        return TaxScenario.from_dict(_load_json(source))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{source}: malformed scenario ({exc})") from exc


def _welfare_frame(report):
    rows = []
    for k, s in enumerate(report.strata):
        rows.append(
            {
                "stratum": s,
                "theta": report.theta[k],
                "P1": report.P1[k],
                "Q1": report.Q1[k],
                "users": report.users[k],
                "ev_per_household": report.ev[k],
                "total_ev": report.total_ev[k],
                "ev_over_expenditure": report.ev_share[k],
                "collection": report.revenue[k],
            }
        )
    rows.append(
        {
            "stratum": "complete",
            "users": float(np.sum(report.users)),
            "total_ev": report.total_ev_sum,
            "collection": report.revenue_sum,
        }
    )
    return pd.DataFrame(rows)


REPRESENTATIVE_FIELDS = ("X", "w0", "semi", "eps_m", "Q0", "users", "P0")


def _override_representatives(scenario, doc):
    unknown = sorted(set(doc) - set(REPRESENTATIVE_FIELDS))
    if unknown:
        raise SchemaError(f"unknown representative-household fields {unknown}")
    d = scenario.to_dict()
    d.update(doc)
    try:
        return type(scenario).from_dict(d)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"malformed representative households ({exc})") from exc


def cmd_welfare(args, run):
    from .welfare import aggregate_ev, population_ev

    scenario = load_scenario(run.input(args.scenario))
    if isinstance(args.representative, str):
        scenario = _override_representatives(scenario, _load_json(run.input(args.representative)))
    if args.gross_revenue_constraint:
        scenario.gross_revenue = True
    run.config = {"scenario": scenario.to_dict(), "mode": args.mode}
    out = {"scenario": scenario.to_dict()}
    report = aggregate_ev(scenario)
    out["representative"] = report.to_dict()
    if args.population:
        from .ingest import read_model_csv
        from .model import EasiParams

        if not args.params:
            raise SchemaError("--population requires --params")
        params = EasiParams.from_json(run.input(args.params))
        s = read_model_csv(run.input(args.population))
        changes = {}
        for k, st in enumerate(scenario.strata):
            d = np.zeros(s.J)
            d[scenario.taxed] = scenario.theta[k]
            changes[str(st)] = d
        s.stratum = s.stratum.astype(str)
        X_scale = float(np.exp(params.centering.get("x", 0.0)))
        pop = population_ev(s, params, changes, mode=args.mode, X_scale=X_scale)
        out["population"] = {
            "n": len(s),
            "included": int(pop.included.sum()),
            "total_weighted_ev": pop.total,
            "by_stratum": pop.by_stratum,
        }
        if args.household_ev:
            _write_csv(pd.DataFrame({"hid": s.hid, "stratum": s.stratum, "x": s.x, "ev": pop.ev}), run.output(args.household_ev))
    _dump_json(out, run.output(args.out))
    if args.csv:
        _write_csv(_welfare_frame(report), run.output(args.csv))
    print(f"welfare: total EV {report.total_ev_sum:.6g}, collection {report.revenue_sum:.6g}")


def cmd_optimize(args, run):
    from .taxopt import OptimizerConfig, compare_scenarios, optimize

    scenario = load_scenario(run.input(args.scenario))
    if args.gross_revenue_constraint:
        scenario.gross_revenue = True
        if args.target is None:
            scenario.revenue_target = None
    if args.target is not None:
        scenario.revenue_target = args.target
    scenario.tax_per_unit = None
    cfg = _load_json(run.input(args.config)) if args.config else {}
    if args.unweighted:
        cfg["weight_by_users"] = False
    config = OptimizerConfig.from_dict(cfg)
    run.config = {"optimizer": config.to_dict(), "scenario": scenario.to_dict()}
    res = optimize(scenario, None, config)
    out = res.to_dict()
    out["alternative"] = res.alternative.to_dict()
    _dump_json(out, run.output(args.out))
    if args.report:
        _write_csv(compare_scenarios(scenario, res.alternative), run.output(args.report))
    print(f"optimize: theta = {np.round(100 * res.theta, 4).tolist()} %, objective {res.objective:.6g} (baseline {res.baseline_objective:.6g})")


def cmd_report(args, run):
    from .elasticity import engel_curve, elasticity_report
    from .model import EasiParams, EvalPoint
    from .welfare import aggregate_ev

    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    if args.params:
        params = EasiParams.from_json(run.input(args.params))
        goods = list(params.goods)
        rep = elasticity_report(EvalPoint.representative(params), params)
        tables = {
            "compensated_price_effects.csv": pd.DataFrame(rep.Gamma, index=goods, columns=goods),
            "slutsky.csv": pd.DataFrame(rep.S, index=goods, columns=goods),
            "real_expenditure_semielasticities.csv": pd.DataFrame({"semielasticity": rep.real_exp_semi}, index=goods),
            "demographic_semielasticities.csv": pd.DataFrame(rep.demo_semi, index=list(params.demographics), columns=goods),
            "expenditure_elasticities.csv": pd.DataFrame({"elasticity": rep.EE}, index=goods),
            "own_price_elasticities.csv": pd.DataFrame({"elasticity": rep.OPE}, index=goods),
            "marshallian_price_elasticities.csv": pd.DataFrame(rep.eps_M, index=goods, columns=goods),
        }
        for name, df in tables.items():
            path = outdir / name
            df.to_csv(path, float_format="%.6f", index_label="good", lineterminator="\n")
            written.append(run.output(str(path)))
        grid = np.linspace(args.x_min, args.x_max, args.x_points)
        curves = engel_curve(params, np.zeros(params.L), None, grid)
        long = pd.DataFrame(
            {"x": np.repeat(grid, params.J), "series": np.tile(goods, len(grid)), "value": curves.ravel()}
        )
        path = outdir / "engel_curves_long.csv"
        _write_csv(long, path)
        written.append(run.output(str(path)))
    if args.scenario:
        sc = load_scenario(run.input(args.scenario))
        df = _welfare_frame(aggregate_ev(sc))
        path = outdir / "welfare_quantities.csv"
        df.round(6).to_csv(path, index=False, lineterminator="\n")
        written.append(run.output(str(path)))
        if args.alternative:
            from .taxopt import compare_scenarios
            from .welfare import TaxScenario

            alt_doc = _load_json(run.input(args.alternative))
            alt = TaxScenario.from_dict(alt_doc.get("alternative", alt_doc))
            path = outdir / "alternative_scenario.csv"
            compare_scenarios(sc, alt).round(6).to_csv(path, index=False, lineterminator="\n")
            written.append(run.output(str(path)))
    if args.household_ev:
        hev = pd.read_csv(run.input(args.household_ev))
        long = pd.DataFrame({"x": hev["x"], "series": "stratum " + hev["stratum"].astype(str), "value": hev["ev"]})
        path = outdir / "ev_scatter_long.csv"
        _write_csv(long.dropna(), path)
        written.append(run.output(str(path)))
    if not written:
        raise SchemaError("report needs at least one of --params, --scenario, --household-ev")
    print(f"report: {len(written)} files in {outdir}")


# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="easi-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--manifest", help="write a run manifest (hashes, config, timing) here")
        sp.set_defaults(func=func)
        return sp

    s = add("synth", cmd_synth, "draw a synthetic population from known parameters")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--params", help="true parameters (JSON); default draws concave random ones")
    s.add_argument("--params-seed", type=int, default=0)
    s.add_argument("--J", type=int, default=3)
    s.add_argument("--L", type=int, default=2)
    s.add_argument("--R", type=int, default=2)
    s.add_argument("--interactions", action="store_true")
    s.add_argument("--eps-sd", type=float, default=0.02)
    s.add_argument("--config", help="SynthConfig JSON (overrides the default design)")
    s.add_argument("--out", default="model.csv")
    s.add_argument("--truth", default="params_true.json")

    s = add("ingest", cmd_ingest, "build model-ready households from survey and tariff files")
    s.add_argument("--households", required=True)
    s.add_argument("--tariffs", required=True)
    s.add_argument("--providers")
    s.add_argument("--deflators")
    s.add_argument("--fx", type=float, default=3038.26)
    s.add_argument("--out", default="model.csv")
    s.add_argument("--exclusions")
    s.add_argument("--centering")
    s.add_argument("--raw")

    s = add("fit", cmd_fit, "estimate parameters by iterated 3SLS")
    s.add_argument("--input", required=True)
    s.add_argument("--config")
    s.add_argument("--out", default="params.json")
    s.add_argument("--diagnostics")
    s.add_argument("--R", type=int)
    s.add_argument("--omit", type=int)
    s.add_argument("--ridge", type=float)
    s.add_argument("--interactions", action="store_true")
    s.add_argument("--goods")
    s.add_argument("--demographics")
    s.add_argument("--centering")

    s = add("elasticities", cmd_elasticities, "semielasticities, Slutsky matrix and elasticities at a point")
    s.add_argument("--params", required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--at", choices=["representative"], default="representative")
    g.add_argument("--household")
    g.add_argument("--at-y", type=float)
    s.add_argument("--input", help="model.csv, needed with --household")
    s.add_argument("--form", choices=["exact", "printed"], default="exact")
    s.add_argument("--out", default="report.json")

    s = add("welfare", cmd_welfare, "EV, quantities and collection for a tariff scenario")
    s.add_argument("--scenario", required=True, help=f"scenario JSON or one of {', '.join(BUILTIN_SCENARIOS)}")
    s.add_argument("--params")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--population", help="model.csv for household-level EV")
    g.add_argument(
        "--representative",
        nargs="?",
        const=True,
        metavar="REPS_JSON",
        help="representative households only (default); an optional JSON overrides their fields (X, w0, semi, eps_m, Q0, users, P0)",
    )
    s.add_argument("--mode", choices=["exact", "linearized"], default="exact")
    s.add_argument("--gross-revenue-constraint", action="store_true")
    s.add_argument("--out", default="welfare.json")
    s.add_argument("--csv")
    s.add_argument("--household-ev")

    s = add("optimize", cmd_optimize, "revenue-neutral progressive rates minimising total EV")
    s.add_argument("--scenario", required=True)
    s.add_argument("--params")
    s.add_argument("--config")
    s.add_argument("--target", type=float)
    s.add_argument("--unweighted", action="store_true", help="sum EV per household without user weights")
    s.add_argument("--gross-revenue-constraint", action="store_true")
    s.add_argument("--out", default="alt.json")
    s.add_argument("--report")

    s = add("report", cmd_report, "table-shaped CSVs and long-format plot data")
    s.add_argument("--params")
    s.add_argument("--scenario")
    s.add_argument("--alternative")
    s.add_argument("--household-ev")
    s.add_argument("--x-min", type=float, default=-1.5)
    s.add_argument("--x-max", type=float, default=1.5)
    s.add_argument("--x-points", type=int, default=61)
    s.add_argument("--out-dir", default="report")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    run = Run(args)
    try:
        args.func(args, run)
    except DataError as exc:
        _report_error(exc)
        return EXIT_DATA
    except (FileNotFoundError, IsADirectoryError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        _report_error(exc)
        return EXIT_DATA
    except NumericalError as exc:
        _report_error(exc)
        return EXIT_NUMERICAL
    if args.manifest:
        _dump_json(run.manifest(), args.manifest)
    return 0


def _report_error(exc):
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
