import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from easi_lab.cli import main
from easi_lab.model import EasiParams


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    assert run("synth", "--n", 3000, "--seed", 7, "--out", d / "model.csv", "--truth", d / "truth.json", "--manifest", d / "m_synth.json") == 0
    assert run("fit", "--input", d / "model.csv", "--R", 2, "--out", d / "params.json", "--diagnostics", d / "diag.json") == 0
    return d


def test_synth_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run("synth", "--n", 1000, "--seed", 7, "--out", tmp_path / f"{name}.csv", "--truth", tmp_path / f"{name}.json") == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_manifest(pipeline):
    m = json.loads((pipeline / "m_synth.json").read_text())
    assert m["subcommand"] == "synth" and m["seed"] == 7
    assert set(m["outputs"]) == {str(pipeline / "model.csv"), str(pipeline / "truth.json")}
    assert all(len(h) == 64 for h in m["outputs"].values())
    assert len(m["config_hash"]) == 64 and m["wall_time_s"] >= 0


def test_fit_outputs(pipeline):
    p = EasiParams.from_json(pipeline / "params.json")
    assert p.invariant_violations(1e-12) == []
    diag = json.loads((pipeline / "diag.json").read_text())
    assert diag["y_path_norms"][-1] < 1e-8
    assert len(diag["sigma"]) == 2
    truth = EasiParams.from_json(pipeline / "truth.json")
    np.testing.assert_allclose(p.b[0], truth.b[0], atol=5e-3)


def test_elasticities_and_welfare(pipeline):
    d = pipeline
    assert run("elasticities", "--params", d / "params.json", "--out", d / "el.json") == 0
    rep = json.loads((d / "el.json").read_text())
    w = np.array(rep["point"]["w"])
    assert abs(w @ np.array(rep["expenditure_elasticity"]) - 1) < 1e-8
    assert rep["concave"] is True
    assert run("elasticities", "--params", d / "params.json", "--at-y", -0.5, "--out", d / "el_y.json") == 0
    assert run("elasticities", "--params", d / "params.json", "--household", 3, "--input", d / "model.csv", "--out", d / "el_h.json") == 0

    scen = {
        "strata": ["m0", "m1"],
        "theta": [0.0076, 0.0076],
        "P0": [[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]],
        "Q0": [100.0, 100.0],
        "users": [10.0, 10.0],
        "eps_m": [-0.5, -0.5],
        "X": [1.0, 1.0],
        "w0": [[0.3, 0.4, 0.3], [0.3, 0.4, 0.3]],
        "semi": [[0.01, -0.005, -0.005], [0.01, -0.005, -0.005]],
        "A": np.zeros((3, 3)).tolist(),
    }
    (d / "scen.json").write_text(json.dumps(scen))
    assert run("welfare", "--scenario", d / "scen.json", "--params", d / "params.json", "--population", d / "model.csv", "--household-ev", d / "hev.csv", "--out", d / "wel.json") == 0
    out = json.loads((d / "wel.json").read_text())
    assert out["population"]["included"] > 0
    hev = pd.read_csv(d / "hev.csv")
    assert (hev["ev"].dropna() > 0).any()
    assert run("report", "--params", d / "params.json", "--household-ev", d / "hev.csv", "--out-dir", d / "rep") == 0
    assert (d / "rep" / "engel_curves_long.csv").is_file()
    assert list(pd.read_csv(d / "rep" / "ev_scatter_long.csv").columns) == ["x", "series", "value"]


def test_welfare_quantity_table_csv(tmp_path):
    assert run("welfare", "--scenario", "builtin:quantity-table", "--csv", tmp_path / "w.csv", "--out", tmp_path / "w.json") == 0
    df = pd.read_csv(tmp_path / "w.csv").set_index("stratum")
    np.testing.assert_allclose(df.loc[["4", "5", "6"], "collection"] / 1e3, [195.69, 90.59, 81.26], rtol=5e-4)
    assert df.loc["complete", "collection"] / 1e3 == pytest.approx(367.54, rel=5e-4)
    np.testing.assert_allclose(df.loc[["4", "5", "6"], "Q1"], [163.13, 198.24, 308.02], atol=0.01)


def test_welfare_representative_override(tmp_path):
    (tmp_path / "reps.json").write_text(json.dumps({"users": [1.0, 1.0, 1.0]}))
    assert run("welfare", "--scenario", "builtin:quantity-table", "--representative", tmp_path / "reps.json", "--out", tmp_path / "w.json") == 0
    out = json.loads((tmp_path / "w.json").read_text())
    assert out["representative"]["totals"]["users"] == 3.0
    (tmp_path / "bad.json").write_text(json.dumps({"nonsense": 1}))
    assert run("welfare", "--scenario", "builtin:quantity-table", "--representative", tmp_path / "bad.json", "--out", tmp_path / "w2.json") == 3


def test_optimize_and_report(tmp_path):
    assert run("optimize", "--scenario", "builtin:colombia", "--out", tmp_path / "alt.json", "--report", tmp_path / "cmp.csv") == 0
    alt = json.loads((tmp_path / "alt.json").read_text())
    assert alt["revenue"] == pytest.approx(367_540.0, rel=1e-6)
    assert alt["objective"] <= alt["baseline_objective"]
    cmp = pd.read_csv(tmp_path / "cmp.csv")
    assert {"group", "metric", "baseline", "alternative", "delta"} <= set(cmp.columns)
    assert run("report", "--scenario", "builtin:colombia", "--alternative", tmp_path / "alt.json", "--out-dir", tmp_path / "rep") == 0
    assert (tmp_path / "rep" / "alternative_scenario.csv").is_file()


def test_optimize_unweighted(tmp_path):
    assert run("optimize", "--scenario", "builtin:colombia", "--unweighted", "--out", tmp_path / "alt.json") == 0
    theta = np.array(json.loads((tmp_path / "alt.json").read_text())["theta"])
    np.testing.assert_allclose(theta, [0.0070, 0.0071, 0.0072], atol=1e-3)


def test_ingest_roundtrip(tmp_path):
    cols = "hid,stratum,municipality,masl_band,age_head,male_head,members,educ,exp_elec,exp_water,exp_sewer,exp_gas,fixed_water,fixed_sewer,fixed_gas,total_income,survey_month,weight"
    rows = [cols]
    rng = np.random.default_rng(0)
    for i in range(40):
        e = rng.uniform(20_000, 150_000, 4).round()
        sewer = 0 if i == 5 else e[2]
        rows.append(f"{i},4,M1,>2000,{30 + i},{i % 2},{1 + i % 5},{8 + i % 9},{e[0]},{e[1]},{sewer},{e[3]},,,,2000000,2017-0{1 + i % 6},1")
    (tmp_path / "hh.csv").write_text("\n".join(rows) + "\n")
    tariffs = "utility,provider,stratum,masl_band,fixed_charge,block1_ub,block1_p,block2_ub,block2_p,block3_p\nelectricity,E,4,,0,,486,,,\n"
    for u in ("water", "sewerage", "gas"):
        tariffs += f"{u},{u[0]},4,>2000,3000,11,1300,22,1800,2700\n"
    (tmp_path / "t.csv").write_text(tariffs)
    assert run("ingest", "--households", tmp_path / "hh.csv", "--tariffs", tmp_path / "t.csv", "--out", tmp_path / "model.csv", "--exclusions", tmp_path / "ex.json") == 0
    ex = json.loads((tmp_path / "ex.json").read_text())
    assert ex["records"] == 40 and ex["zero_share"] == 1 and ex["excluded_hids"] == ["5"]
    df = pd.read_csv(tmp_path / "model.csv")
    np.testing.assert_allclose(df[["w1", "w2", "w3", "w4"]].sum(axis=1), 1.0, atol=1e-12)


class TestExitCodes:
    def test_usage(self, capsys):
        assert run("bogus") == 2
        assert run("fit") == 2

    def test_missing_file(self, tmp_path, capsys):
        assert run("fit", "--input", tmp_path / "nope.csv", "--out", tmp_path / "p.json") == 3
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "FileNotFoundError"

    def test_numerical(self, tmp_path):
        assert run("synth", "--n", 200, "--seed", 1, "--out", tmp_path / "m.csv", "--truth", tmp_path / "t.json") == 0
        assert run("fit", "--input", tmp_path / "m.csv", "--R", 2, "--config", _write(tmp_path / "c.json", {"max_outer_iterations": 1}), "--out", tmp_path / "p.json") == 4

    def test_unknown_builtin(self, tmp_path):
        assert run("welfare", "--scenario", "builtin:nope", "--out", tmp_path / "w.json") == 3


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return path


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "easi_lab.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == "0.1.0"
