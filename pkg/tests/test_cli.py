"""Tests for the ``dbias`` command line."""

import csv
import io
import json

import numpy as np
import pandas as pd
import pytest

from app.cli import main


@pytest.fixture
def simulated(tmp_path):
    prefix = tmp_path / "demo"
    assert main(["simulate", "--t-star", "17", "--n", "120", "--seed", "4", "--out", str(prefix),
                 "--save-params", str(tmp_path / "params.kv")]) == 0
    return tmp_path / "demo_panel.csv", tmp_path / "demo_outcome.csv"


def test_simulate_writes_panel_and_params(simulated, tmp_path):
    panel_path, outcome_path = simulated
    long = pd.read_csv(panel_path, comment="#")
    assert len(long) == 120 * 17
    assert {"subject_id", "t", "v1", "v2", "l1", "l2", "l3", "a"} <= set(long.columns)
    assert len(pd.read_csv(outcome_path, comment="#")) == 120
    assert "beta_lag" in (tmp_path / "params.kv").read_text()


def test_simulate_from_saved_params(simulated, tmp_path):
    prefix = tmp_path / "again"
    assert main(["simulate", "--params", str(tmp_path / "params.kv"), "--n", "10", "--delta", "8",
                 "--censor-rate", "0.05", "--out", str(prefix)]) == 0
    long = pd.read_csv(tmp_path / "again_panel.csv", comment="#")
    assert sorted(long["t"].unique()) == [1, 9, 17]
    assert "c" in long.columns


def _row(text: str) -> dict:
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 1
    return rows[0]


def test_estimate(simulated, capsys):
    panel_path, outcome_path = simulated
    code = main(["estimate", "--panel", str(panel_path), "--outcome", str(outcome_path),
                 "--method", "ir", "--delta", "8"])
    assert code == 0
    row = _row(capsys.readouterr().out)
    assert list(row) == ["psi_hat", "ci_lo", "ci_hi", "n_followers", "ess", "flags"]
    assert np.isfinite(float(row["psi_hat"]))
    assert row["ci_lo"] == "" and row["ci_hi"] == ""
    assert int(row["n_followers"]) > 0


def test_estimate_to_file(simulated, tmp_path):
    panel_path, outcome_path = simulated
    out = tmp_path / "estimate.csv"
    code = main(["estimate", "--panel", str(panel_path), "--outcome", str(outcome_path),
                 "--method", "ipw", "--out", str(out)])
    assert code == 0
    frame = pd.read_csv(out)
    assert len(frame) == 1
    assert frame.loc[0, "ess"] > 0


def test_bootstrap(simulated, capsys):
    panel_path, outcome_path = simulated
    code = main(["bootstrap", "--panel", str(panel_path), "--outcome", str(outcome_path),
                 "--method", "ir", "--delta", "8", "--replicates", "4"])
    assert code == 0
    row = _row(capsys.readouterr().out)
    assert float(row["ci_lo"]) <= float(row["ci_hi"])


def test_invalid_grid_exit_code(simulated):
    panel_path, outcome_path = simulated
    assert main(["estimate", "--panel", str(panel_path), "--outcome", str(outcome_path),
                 "--delta", "40"]) == 2


def test_exact(tmp_path, capsys, three_point_text):
    path = tmp_path / "three.mdp"
    path.write_text(three_point_text)
    assert main(["exact", "--mdp", str(path), "--delta", "2", "--action", "bound"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["grid"] == [1, 3]
    assert result["lo"] == pytest.approx(-0.42)


def test_exact_errors(tmp_path):
    assert main(["exact", "--mdp", str(tmp_path / "missing.mdp")]) == 2
    path = tmp_path / "broken.mdp"
    path.write_text("horizon 2\nstates a\n")
    assert main(["exact", "--mdp", str(path)]) == 3


def test_sweep(tmp_path):
    out = tmp_path / "sweep.csv"
    code = main(["sweep", "--t-star", "9", "--n", "40", "--replications", "2", "--deltas", "1,4",
                 "--truth-m", "1000", "--estimators", "ipw,ir", "--out", str(out),
                 "--replicates", "--emit-gnuplot"])
    assert code == 0
    assert len(pd.read_csv(out, comment="#")) == 4
    assert (tmp_path / "sweep_replicates.csv").exists()
    assert "plot" in (tmp_path / "sweep.gp").read_text()


def test_sweep_rejects_unknown_estimator(tmp_path):
    assert main(["sweep", "--estimators", "sgd", "--out", str(tmp_path / "x.csv")]) == 2
