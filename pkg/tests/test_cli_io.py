import json
import subprocess
import sys

import numpy as np
import pytest

from tensorload import cli_io
from tensorload.cli_io import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_STAGE,
    ConfigError,
    PipelineError,
    SolverSettings,
    load_config,
    main,
    parse_config,
    run_pipeline,
)
from tensorload.estimate import read_marginal_csv
from tensorload.load_model import PARAM_NAMES, REFERENCE_PARAMS, read_trace

SMALL_GRID = [
    {"label": "v_d_prime", "nodes": 5},
    {"label": "v_q_prime", "nodes": 5},
    {"label": "s", "nodes": 5},
    {"label": "omega", "lower": 0.0, "upper": 1.0, "nodes": 5},
    {"label": "X_s", "lower": 0.02, "upper": 0.3, "nodes": 5},
]


def small_doc(tmp_path, mode="estimate", **extra):
    doc = {"mode": mode, "out": str(tmp_path / "out"), "synth": {"t_end": 0.6},
           "grid": SMALL_GRID, "joint_pairs": [["omega", "X_s"]], "seed": 3}
    doc.update(extra)
    return doc


# -- configuration ---------------------------------------------------------------


def test_minimal_simulate_config_takes_defaults(tmp_path):
    cfg = parse_config({"mode": "simulate", "synth": {}}, tmp_path)
    assert cfg.params == REFERENCE_PARAMS
    assert cfg.solver == SolverSettings()
    assert cfg.out == tmp_path / "out" and cfg.seed == 0 and cfg.grid is None


def test_reversed_range_names_the_parameter(tmp_path):
    doc = small_doc(tmp_path)
    doc["grid"] = SMALL_GRID + [{"label": "H", "lower": 2.0, "upper": 0.5, "nodes": 3}]
    with pytest.raises(ConfigError) as err:
        parse_config(doc)
    assert err.value.field == "H"
    assert "H" in str(err.value)


@pytest.mark.parametrize("patch, field", [
    ({"grid": SMALL_GRID + [{"label": "zeta", "lower": 0, "upper": 1, "nodes": 2}]}, "grid.zeta"),
    ({"params": {"zeta": 1.0}}, "params.zeta"),
    ({"solver": {"max_rank": 0}}, "solver.max_rank"),
    ({"solver": {"bogus": 1}}, "solver.bogus"),
    ({"joint_pairs": [["omega", "H"]]}, "joint_pairs[0]"),
    ({"mode": "fly"}, "mode"),
    ({"extra": 1}, "extra"),
    ({"grid": SMALL_GRID[3:]}, "grid"),
    ({"slip_sign": 2}, "slip_sign"),
    ({"params": {"X_s": -0.1}}, "params.X_s"),
])
def test_invalid_configs_name_the_field(tmp_path, patch, field):
    doc = small_doc(tmp_path)
    doc.update(patch)
    with pytest.raises(ConfigError) as err:
        parse_config(doc)
    assert err.value.field == field


def test_grid_orders_states_first_and_counts_points(tmp_path):
    doc = small_doc(tmp_path)
    doc["grid"] = SMALL_GRID[3:] + SMALL_GRID[2::-1]
    cfg = parse_config(doc)
    assert cfg.grid.labels == ("v_d_prime", "v_q_prime", "s", "omega", "X_s")
    assert cfg.grid_points == 5**5
    assert cfg.grid.dims[0].lower == -0.012 and cfg.grid.dims[2].upper == 0.02


def test_config_paths_resolve_next_to_the_file(tmp_path):
    (tmp_path / "t.csv").write_text("t,V,theta,P,Q\n0,1,0,0.6,0.3\n0.01,1,0,0.6,0.3\n")
    (tmp_path / "c.json").write_text(json.dumps({"mode": "simulate", "trace": "t.csv"}))
    cfg = load_config(tmp_path / "c.json")
    assert cfg.trace == tmp_path / "t.csv" and cfg.out == tmp_path / "out"
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


# -- modes -----------------------------------------------------------------------


def test_synth_then_simulate_round_trip(tmp_path):
    r1 = run_pipeline(parse_config({"mode": "synth", "out": str(tmp_path / "a"),
                                    "synth": {"t_end": 0.5}}))
    r2 = run_pipeline(parse_config({"mode": "synth", "out": str(tmp_path / "b"),
                                    "synth": {"t_end": 0.5}}))
    a, b = (tmp_path / "a" / "trace.csv"), (tmp_path / "b" / "trace.csv")
    assert a.read_bytes() == b.read_bytes()
    assert r1.diagnostics["samples"] == r2.diagnostics["samples"] == len(read_trace(a))
    rep = run_pipeline(parse_config({"mode": "simulate", "trace": str(a),
                                     "out": str(tmp_path / "sim")}))
    assert max(rep.diagnostics["rmse_P"], rep.diagnostics["rmse_Q"]) <= 1e-6
    data = np.loadtxt(tmp_path / "sim" / "predicted_response.csv", delimiter=",", skiprows=1)
    assert data.shape[1] == 5


def test_oracle_mode_lands_next_to_truth(tmp_path):
    doc = small_doc(tmp_path, "oracle", grid=[
        {"label": "omega", "lower": 0.0, "upper": 1.0, "nodes": 11},
        {"label": "X_s", "lower": 0.02, "upper": 0.3, "nodes": 15}])
    doc.pop("joint_pairs")
    run_pipeline(parse_config(doc))
    res = json.loads((tmp_path / "out" / "oracle_result.json").read_text())
    assert abs(res["joint_mode"]["omega"] - 0.5) <= 0.1
    assert abs(res["joint_mode"]["X_s"] - 0.096) <= 0.28 / 15
    post = np.loadtxt(tmp_path / "out" / "posterior.csv", delimiter=",", skiprows=1)
    assert post.shape == (11 * 15, 4)


@pytest.fixture(scope="module")
def estimate_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("est")
    report = run_pipeline(parse_config(small_doc(tmp)))
    return tmp / "out", report


def test_estimate_writes_every_marginal(estimate_run):
    out, report = estimate_run
    labels = ["v_d_prime", "v_q_prime", "s", "omega", "X_s"]
    for lb in labels:
        m = read_marginal_csv(out / f"marginal_{lb}.csv", lb)
        assert np.all(m.values >= 0)
        assert m.integral() == pytest.approx(1.0, abs=1e-6)
        assert (out / f"marginal_{lb}.dat").is_file()
    joint = np.loadtxt(out / "joint_omega_X_s.csv", delimiter=",", skiprows=1)
    assert joint.shape == (25, 3) and np.all(joint[:, 2] >= 0)
    res = json.loads((out / "estimation_result.json").read_text())
    assert set(res["estimate"]) == set(PARAM_NAMES)
    assert res["estimated_parameters"] == ["omega", "X_s"]
    assert report.diagnostics["eigen_residual"] <= 1e-6


def test_estimate_writes_nothing_outside_out(estimate_run):
    out, report = estimate_run
    assert {p.parent for p in report.artifacts} == {out.resolve()}
    assert sorted(p.name for p in out.parent.iterdir()) == ["out"]


def test_failed_stage_removes_its_artifacts(tmp_path, monkeypatch):
    def broken(*args, **kw):
        raise OSError("disk full")

    monkeypatch.setattr(cli_io, "write_joint_csv", broken)
    with pytest.raises(PipelineError) as err:
        run_pipeline(parse_config(small_doc(tmp_path)))
    assert err.value.stage == "write"
    assert not (tmp_path / "out").exists()


def test_artifacts_refuse_paths_outside_out(tmp_path):
    art = cli_io._Artifacts(tmp_path / "out")
    with pytest.raises(PipelineError):
        art.path("../escape.txt")


# -- command line ----------------------------------------------------------------


def test_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"t_end": 0.3}}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["mode"] == "simulate"

    cfg.write_text(json.dumps({"synth": {"t_end": 0.3}, "params": {"H": -1.0}}))
    assert main(["simulate", "--config", str(cfg)]) == EXIT_CONFIG
    assert "params.H" in capsys.readouterr().err

    cfg.write_text(json.dumps({"synth": {"t_end": 0.3},
                               "grid": [{"label": "X_s", "lower": 2.0, "upper": 3.0,
                                         "nodes": 3}]}))
    assert main(["oracle", "--config", str(cfg), "--out", str(tmp_path / "x")]) == EXIT_STAGE
    assert "[enumerate]" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_console_script_entry_point(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"t_end": 0.2}}))
    proc = subprocess.run([sys.executable, "-m", "tensorload", "synth", "--config", str(cfg),
                           "--out", str(tmp_path / "o"), "--seed", "5"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "trace.csv").is_file()
