"""Command-line front end: exit codes, artifacts, config resolution."""

import json
import os

import numpy as np
import pytest

from h2conic import cli
from h2conic.benchmark import BenchReport, BenchmarkRun
from h2conic.cones import Cone
from h2conic.lti import Plant, StateSpace, save_json


@pytest.fixture
def scalar_plant_file(tmp_path):
    plant = Plant(
        A=[[-1.0]], B1=[[1.0, 0.0]], B2=[[1.0]],
        C1=[[1.0], [0.0]], C2=[[1.0]],
        D12=[[0.0], [1.0]], D21=[[0.0, 1.0]],
    )
    path = tmp_path / "plant.json"
    save_json(plant, path)
    return str(path)


@pytest.fixture
def first_order_file(tmp_path):
    path = tmp_path / "sys.json"
    save_json(StateSpace([[-1.0]], [[1.0]], [[1.0]]), path)
    return str(path)


# ---------------------------------------------------------------------------
# analyze-cone
# ---------------------------------------------------------------------------


def test_analyze_cone_feasible(first_order_file, capsys):
    code = cli.run(["analyze-cone", "--sys", first_order_file, "--cone", "-2", "2"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["feasible"] is True
    assert payload["frequency_check"]["ok"] is True
    assert "certificate" in payload


def test_analyze_cone_infeasible_exits_one(first_order_file, capsys):
    code = cli.run(["analyze-cone", "--sys", first_order_file,
                    "--cone", "-0.01", "0.01"])
    assert code == 1
    out = capsys.readouterr().out
    assert '"infeasible"' in out
    assert '"error"' in out


def test_analyze_cone_missing_system_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.run(["analyze-cone", "--sys", str(tmp_path / "nope.json"),
                 "--cone", "-1", "1"])
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# init / synthesize
# ---------------------------------------------------------------------------


def test_missing_plant_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.run(["synthesize"])
    assert exc.value.code == 2


def test_init_writes_artifact(scalar_plant_file, tmp_path):
    out = str(tmp_path / "out")
    code = cli.run(["init", "--plant", scalar_plant_file,
                    "--cone", "-0.01", "0.05", "--cone-role", "controller",
                    "--out", out])
    assert code == 0
    payload = json.loads((tmp_path / "out" / "init.json").read_text())
    assert payload["provenance"] == "conicc"
    assert np.asarray(payload["K0"]).shape == (2, 2)
    assert payload["config"]["cone_role"] == "controller"


def _synthesize(plant_file, out, extra=()):
    return cli.run(["synthesize", "--plant", plant_file,
                    "--cone", "-0.01", "0.05", "--cone-role", "controller",
                    "--epsilon", "0.5", "--max-iters", "3",
                    "--out", out, *extra])


def _normalized_artifacts(out_dir):
    with open(os.path.join(out_dir, "controller.json")) as fh:
        payload = json.load(fh)
    payload["config"].pop("out")
    csv_lines = [
        line for line in open(os.path.join(out_dir, "history.csv"))
        if not line.startswith("# out =")
    ]
    return payload, csv_lines


def test_synthesize_writes_artifacts_deterministically(scalar_plant_file, tmp_path):
    out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
    assert _synthesize(scalar_plant_file, out_a) == 0
    assert _synthesize(scalar_plant_file, out_b) == 0
    pay_a, csv_a = _normalized_artifacts(out_a)
    pay_b, csv_b = _normalized_artifacts(out_b)
    assert pay_a == pay_b
    assert csv_a == csv_b
    assert pay_a["status"] in ("converged", "max-iters")
    assert any(line.startswith("iter,") for line in csv_a)  # column header
    assert len(csv_a) >= 2  # header plus at least one iteration row


def test_config_file_with_flag_override(scalar_plant_file, tmp_path):
    cfg_path = tmp_path / "cfg.toml"
    cfg_path.write_text(
        f'plant = "{scalar_plant_file}"\n'
        "cone = [-0.01, 0.05]\n"
        'cone_role = "controller"\n'
        "epsilon = 0.5\n"
        "max_iters = 2\n"
    )
    out = str(tmp_path / "out")
    code = cli.run(["synthesize", "--config", str(cfg_path),
                    "--max-iters", "1", "--out", out])
    assert code == 0
    payload = json.loads((tmp_path / "out" / "controller.json").read_text())
    assert payload["config"]["max_iters"] == 1  # flag beats config file
    assert payload["config"]["epsilon"] == 0.5  # config file beats default


def test_unknown_config_key_rejected(scalar_plant_file, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"plant": scalar_plant_file, "tolerance": 1e-3}))
    with pytest.raises(SystemExit, match="unknown config key"):
        cli.run(["synthesize", "--config", str(cfg_path)])


# ---------------------------------------------------------------------------
# benchmark emission (experiment stubbed out)
# ---------------------------------------------------------------------------


def _stub_run(with_inew: bool) -> BenchmarkRun:
    names = ["H2-Optimal-G1", "ConicC", "Cnew"] + (["Inew"] if with_inew else [])
    n_sets = 3
    report = BenchReport(
        controller_names=names,
        param_sets=[None] * n_sets,
        stable={n: [True] * n_sets for n in names},
        costs={n: [80.0 + i, 81.0, 82.0] for i, n in enumerate(names)},
        in_cone={n: n != "H2-Optimal-G1" for n in names},
        iterations={"Cnew": 4, "H2-Optimal-G1": None, "ConicC": None},
        cone=Cone(-1.6e-5, 0.04),
    )
    histories = {"Cnew": [
        {"iter": 1, "jprime": 90.0, "jtrue": 89.0,
         "lyap_residual": 0.0, "conic_residual": 0.0},
    ]}
    statuses = {"Cnew": "converged"}
    if with_inew:
        statuses["Inew"] = "converged"
    else:
        statuses["Inew"] = "init-iteration-limit"
    return BenchmarkRun(
        report=report, controllers={}, histories=histories, statuses=statuses,
        ico_eps_trajectory=[0.5, 0.2, -0.1] if with_inew else [0.5, 0.2],
        plant_cone=Cone(-24.84, 62200.0), controller_cone=Cone(-1.6e-5, 0.04),
        recomputed_sector=(-20.0, 62200.0, 50000.0),
        reference_cost=72.0, g1_design_cost=60.0,
    )


BENCH_FILES = ("table1.csv", "histogram_cost.csv", "histogram_regret.csv",
               "design_curves.csv", "report.json")


def test_benchmark_emission_complete_run(monkeypatch, tmp_path, capsys):
    monkeypatch.setattr(cli, "run_benchmark", lambda **kw: _stub_run(True))
    out = str(tmp_path / "bench")
    code = cli.run(["benchmark", "--n", "3", "--out", out])
    assert code == 0
    for fname in BENCH_FILES:
        assert os.path.exists(os.path.join(out, fname))
    table = open(os.path.join(out, "table1.csv")).read()
    assert "IterativeConic" in table  # literature row sits next to ConicC
    assert "73.74" in table
    report = json.loads((tmp_path / "bench" / "report.json").read_text())
    assert report["reference_cost"] == 72.0
    assert report["statuses"]["Inew"] == "converged"


def test_benchmark_exit_one_when_descent_controller_missing(
        monkeypatch, tmp_path, capsys):
    monkeypatch.setattr(cli, "run_benchmark", lambda **kw: _stub_run(False))
    out = str(tmp_path / "bench")
    code = cli.run(["benchmark", "--n", "3", "--out", out])
    assert code == 1
    for fname in BENCH_FILES:
        assert os.path.exists(os.path.join(out, fname))
    assert '"no-convergence"' in capsys.readouterr().out
