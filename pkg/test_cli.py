"""
End-to-end tests of the command line through run(argv)
"""

import json

import pandas as pd
import pytest

from backend.cli import EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_OK, run
from backend.integrations.csv_export import ENVELOPE_COLUMNS, STRESS_COLUMNS, TRACE_COLUMNS
from backend.integrations.instance_store import dumps_instance, save_instance


@pytest.fixture
def e1_path(e1, tmp_path):
    return str(save_instance(e1, tmp_path / "e1.json"))


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in ("MARKET_EPSILON", "MARKET_MAX_ITER", "MARKET_SCHEDULE", "MARKET_SEED", "MARKET_N_SEEDS",
                 "MARKET_EXPORT_DIR", "MARKET_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


def test_solve_prints_equilibrium(e1_path, tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    report = tmp_path / "report.json"
    assert run(["solve", "--instance", e1_path, "--trace", str(trace), "--out", str(report)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "p_B[B1->M1] = 5.550000" in out
    assert "p_D[D1->M1] = 3.227273" in out
    assert "converged: yes" in out
    assert list(pd.read_csv(trace).columns) == TRACE_COLUMNS
    assert json.loads(report.read_text())["converged"] is True


def test_solve_with_fee_and_schedule(e1_path, capsys):
    assert run(["solve", "--instance", e1_path, "--tau", "0.5", "--schedule", "async", "--seed", "4"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "p_B[B1->M1] = 11.100000" in out
    assert "schedule: async_random_fair" in out


def test_non_convergence_has_its_own_exit_code(e1_path, capsys):
    status = run(["solve", "--instance", e1_path, "--max-iter", "1", "--epsilon", "1e-14"])
    assert status == EXIT_NOT_CONVERGED
    assert "no convergence" in capsys.readouterr().err


def test_unknown_flag_is_rejected(e1_path):
    assert run(["solve", "--instance", e1_path, "--bogus"]) == EXIT_INVALID
    assert run(["solve", "--instance", e1_path, "--rho", "1.0"]) == EXIT_INVALID
    assert run(["solve", "--instance", e1_path, "--method", "sf"]) == EXIT_INVALID
    assert run(["baseline", "--instance", e1_path, "--method", "dealer"]) == EXIT_INVALID


def test_unwritable_output_gives_one_line_diagnostic(e1_path, tmp_path, capsys):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    assert run(["solve", "--instance", e1_path, "--out", str(blocker / "report.json")]) == EXIT_INVALID
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert "blocker" in err[0]
    assert run(["experiment", "stress", "--seeds", "1", "--out", str(blocker / "stress.csv")]) == EXIT_INVALID


def test_invalid_instance_gives_one_line_diagnostic(e1, tmp_path, capsys):
    doc = json.loads(dumps_instance(e1))
    doc["models"][0]["buyers"][0]["omega"] = 1.0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    assert run(["solve", "--instance", str(path)]) == EXIT_INVALID
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert "ρ_j must lie in [0,1)" in err[0]


def test_malformed_document(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{"datasets": []}')
    assert run(["solve", "--instance", str(path)]) == EXIT_INVALID
    assert "/models" in capsys.readouterr().err


def test_validate(e1_path, e1, tmp_path, capsys):
    assert run(["validate", "--instance", e1_path]) == EXIT_OK
    assert "validation: pass" in capsys.readouterr().out
    doc = json.loads(dumps_instance(e1))
    doc["datasets"][0]["kappa_d"] = 0.0
    path = tmp_path / "zero.json"
    path.write_text(json.dumps(doc))
    assert run(["validate", "--instance", str(path)]) == EXIT_INVALID
    assert "κ_D must be strictly positive" in capsys.readouterr().out


def test_generate_is_reproducible(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(["generate", "--seed", "5", "--out", str(a)]) == EXIT_OK
    assert run(["generate", "--seed", "5", "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert run(["validate", "--instance", str(a)]) == EXIT_OK


def test_fee(e1_path, capsys):
    assert run(["fee", "--instance", e1_path, "--verify"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "tau_star = 0.944500" in out
    assert "binding_model = M1" in out
    assert "infeasible_above = yes" in out


def test_baseline(e1_path, capsys):
    assert run(["baseline", "--instance", e1_path, "--method", "sf"]) == EXIT_OK
    assert "p_B[B1->M1] = 5.300000" in capsys.readouterr().out
    assert run(["baseline", "--instance", e1_path, "--method", "bc"]) == EXIT_OK
    assert "p_B[B1->M1] = 100.000000" in capsys.readouterr().out


def test_envelope(e1_path, tmp_path, capsys):
    out_csv = tmp_path / "envelope.csv"
    assert run(["envelope", "--instance", e1_path, "--panel", "kd_delta", "--grid", "1,2",
                "--analytic-only", "--out", str(out_csv)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "analytic=1890.000000" in out
    assert "analytic=940.000000" in out
    written = pd.read_csv(out_csv)
    assert list(written.columns) == ENVELOPE_COLUMNS
    assert written["axis2_analytic_max"].tolist() == pytest.approx([1890.0, 940.0])


def test_shapley(tmp_path, capsys):
    utilities = tmp_path / "utilities.json"
    utilities.write_text(json.dumps({"utilities": [
        {"model": "M1", "subset": [], "utility": 0.0},
        {"model": "M1", "subset": ["D1"], "utility": 0.3},
        {"model": "M1", "subset": ["D2"], "utility": 0.5},
        {"model": "M1", "subset": ["D1", "D2"], "utility": 1.0},
    ]}))
    assert run(["shapley", "--utilities", str(utilities)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "SV[D1|M1] = 0.400000" in out
    assert "SV[D2|M1] = 0.600000" in out


def test_stress_experiment(tmp_path, capsys):
    out_csv = tmp_path / "stress.csv"
    assert run(["experiment", "stress", "--seeds", "2", "--out", str(out_csv)]) == EXIT_OK
    written = pd.read_csv(out_csv)
    assert list(written.columns) == STRESS_COLUMNS
    assert set(written["method"]) == {"triplewin", "sf", "df", "bc"}
    assert "experiment: stress" in capsys.readouterr().out


def test_experiment_method_filter(tmp_path):
    out_csv = tmp_path / "stress.csv"
    assert run(["experiment", "stress", "--seeds", "1", "--method", "triplewin", "--method", "bc",
                "--out", str(out_csv)]) == EXIT_OK
    assert set(pd.read_csv(out_csv)["method"]) == {"triplewin", "bc"}
    assert run(["experiment", "envelope", "--seeds", "1", "--method", "sf"]) == EXIT_INVALID


def test_experiment_defaults_to_export_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("MARKET_EXPORT_DIR", str(tmp_path / "exports"))
    assert run(["experiment", "propagation", "--seeds", "1", "--rounds", "2"]) == EXIT_OK
    written = pd.read_csv(tmp_path / "exports" / "propagation.csv")
    assert set(written["stage"].astype(str)) == {"0", "1", "2", "converged"}
