"""Tests for the Monte Carlo experiment harness."""

import io

import numpy as np
import pandas as pd
import pytest

from app.errors import ConfigError
from app.models import DgpParams, EstimatorSpec, ExperimentReport, ReplicateRecord
from app.services.harness import (
    EXPERIMENTS,
    gnuplot_script,
    load_sweep_config,
    run_effect_delay,
    run_rct,
    run_sweep,
    run_varred,
    summarize,
    varred_estimators,
    variance_gap_ci,
    write_replicates,
    write_report,
)


def _records(values, estimator="ir", delta=1):
    return [ReplicateRecord(estimator=estimator, delta=delta, omega=1, replicate=r, psi_hat=v,
                            n_followers=10) for r, v in enumerate(values)]


def _tiny(**overrides):
    settings = dict(n=80, replications=3, t_star=9, deltas=[1, 4], truth_m=1000,
                    estimators="ipw,ir,tmle", root_seed=5)
    settings.update(overrides)
    return load_sweep_config(**settings)


class TestSummarize:
    def test_mse_identity(self):
        row = summarize(_records([1.0, 2.0, 3.0, 4.0]), 2.0, 0.1, experiment="sweep",
                        spec=EstimatorSpec(method="ir"), delta=1, omega=1, t_len=9)
        assert row.bias == pytest.approx(0.5)
        assert row.variance == pytest.approx(5.0 / 3.0)
        assert row.mse == pytest.approx(1.5)
        assert row.mse == pytest.approx(row.bias ** 2 + (row.n_reps - 1) / row.n_reps * row.variance)
        assert row.mc_se_of_bias == pytest.approx(np.sqrt(5.0 / 12.0 + 0.01))

    def test_failed_replicates_are_counted(self):
        row = summarize(_records([1.0, None, 3.0]), 0.0, 0.0, experiment="sweep",
                        spec=EstimatorSpec(method="ipw"), delta=2, omega=1, t_len=5)
        assert row.n_reps == 2 and row.n_failed == 1
        assert row.mean_estimate == pytest.approx(2.0)

    def test_single_replicate_has_no_variance(self):
        row = summarize(_records([1.0]), 0.0, 0.0, experiment="sweep",
                        spec=EstimatorSpec(method="ir"), delta=1, omega=1, t_len=9)
        assert row.variance is None and row.mc_se_of_bias is None
        assert row.bias == pytest.approx(1.0)


class TestConfig:
    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "sweep.kv"
        path.write_text("# desk run\nn = 50\ndeltas = 1,2,4\nestimators = ipw,tmle+clip=2.5\n")
        cfg = load_sweep_config(path, n=70)
        assert cfg.n == 70
        assert cfg.deltas == [1, 2, 4]
        assert [spec.label for spec in cfg.estimators] == ["ipw", "tmle+clip=2.5"]

    @pytest.mark.parametrize("text", ["deltas = 0\n", "colour = blue\n", "estimators = sgd\n",
                                      "alphas = 60\n", "omegas = 0\n"])
    def test_invalid(self, tmp_path, text):
        path = tmp_path / "bad.kv"
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_sweep_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_sweep_config(tmp_path / "absent.kv")

    def test_varred_variants(self):
        labels = [spec.label for spec in varred_estimators([0.1, 2.5])]
        assert labels[:3] == ["ipw", "ir", "tmle"]
        assert "ipw+clip=2.5" in labels and "tmle+clip=0.1" in labels
        assert "tmle+pool_time" in labels and "ir+pool_regimes" in labels
        assert set(EXPERIMENTS) == {"sweep", "effect-delay", "rct", "varred"}


class TestExperiments:
    def test_sweep_shape(self):
        report = run_sweep(_tiny())
        assert len(report.rows) == 2 * 3
        assert report.grids == {1: list(range(1, 10)), 4: [1, 5, 9]}
        assert len(report.replicates) == 3 * 2 * 3
        assert report.row("ir", 4).t_len == 3

    def test_worker_count_does_not_change_results(self):
        serial = run_sweep(_tiny(workers=1))
        parallel = run_sweep(_tiny(workers=2))
        assert [r.model_dump() for r in serial.replicates] == [
            r.model_dump() for r in parallel.replicates]
        first, second = io.StringIO(), io.StringIO()
        write_report(serial, first)
        write_report(parallel, second)
        assert first.getvalue() == second.getvalue()

    def test_trivial_model_has_no_bias(self):
        zero = [0.0, 0.0, 0.0]
        params = DgpParams(
            beta_intercept=zero, beta_v=[[0.0, 0.0]] * 3, beta_lag=[zero] * 3, beta_treat=zero,
            gamma_intercept=-3.0, gamma_v=[0.0, 0.0], gamma_l=zero, t_star=9, noise_sd=1e-12,
        )
        report = run_sweep(_tiny(), params)
        for row in report.rows:
            assert abs(row.bias) < 1e-8

    def test_effect_delay_keeps_outcome_estimators(self):
        report = run_effect_delay(_tiny(omegas=[1, 3], replications=2))
        assert {row.estimator for row in report.rows} == {"ir", "tmle"}
        assert {row.omega for row in report.rows} == {1, 3}
        assert set(report.truths) == {1, 3}

    def test_rct_adds_naive(self):
        report = run_rct(_tiny(replications=2))
        assert "naive" in {row.estimator for row in report.rows}

    def test_varred_uses_finest_grid(self):
        report = run_varred(_tiny(replications=2, alphas=[2.5]))
        assert {row.delta for row in report.rows} == {1}
        assert report.row("ipw+clip=2.5", 1).variant == "clip"

    def test_outputs(self, tmp_path):
        report = run_sweep(_tiny(replications=2))
        write_report(report, tmp_path / "sweep.csv")
        write_replicates(report, tmp_path / "replicates.csv")
        header = (tmp_path / "sweep.csv").read_text().splitlines()[:2]
        assert header[0].startswith("# experiment=sweep")
        frame = pd.read_csv(tmp_path / "sweep.csv", comment="#")
        assert len(frame) == len(report.rows)
        assert {"bias", "variance", "mse", "mc_se_of_bias"} <= set(frame.columns)
        assert len(pd.read_csv(tmp_path / "replicates.csv", comment="#")) == len(report.replicates)

        script = gnuplot_script(report, "sweep.csv")
        assert "set logscale x 2" in script
        assert "'sweep.csv'" in script and "'ipw'" in script


class TestVarianceGap:
    def _report(self, spread_first, spread_second):
        rng = np.random.default_rng(3)
        records = (_records(rng.normal(0.0, spread_first, 60), estimator="ipw")
                   + _records(rng.normal(0.0, spread_second, 60), estimator="ir"))
        return ExperimentReport(experiment="sweep", rows=[], replicates=records)

    def test_clear_gap_is_positive(self):
        gap = variance_gap_ci(self._report(5.0, 0.1), "ipw", "ir", delta=1, b=400)
        assert gap.gap > 0 and gap.positive
        assert gap.lo <= gap.gap <= gap.hi

    def test_reversed_gap_is_not(self):
        assert not variance_gap_ci(self._report(0.1, 5.0), "ipw", "ir", delta=1, b=400).positive

    def test_needs_shared_replicates(self):
        with pytest.raises(ConfigError):
            variance_gap_ci(self._report(1.0, 1.0), "ipw", "tmle", delta=1)


@pytest.mark.slow
class TestAcceptance:
    """Desk-scale runs; minutes to tens of minutes each."""

    def test_effect_delay_bias_pattern(self):
        cfg = load_sweep_config(omegas=[8], deltas=[1, 2, 4, 8, 64, 128, 256], workers=4)
        report = run_effect_delay(cfg)
        for method in ("ir", "tmle"):
            for delta in (1, 2, 4, 8):
                row = report.row(method, delta, 8)
                assert abs(row.bias) < 3 * row.mc_se_of_bias
            for delta in (64, 128, 256):
                row = report.row(method, delta, 8)
                assert abs(row.bias) > 5 * row.mc_se_of_bias

    def test_variance_ordering_at_finest_grid(self):
        report = run_sweep(load_sweep_config(deltas=[1], workers=4))
        assert variance_gap_ci(report, "ipw", "tmle", delta=1).positive
        assert variance_gap_ci(report, "tmle", "ir", delta=1).positive

    def test_rct_bias_persists(self):
        report = run_rct(load_sweep_config(deltas=[1, 256], workers=4))
        for method in ("ipw", "ir", "tmle"):
            assert abs(report.row(method, 1).bias) < 3 * report.row(method, 1).mc_se_of_bias
            assert abs(report.row(method, 256).bias) > 5 * report.row(method, 256).mc_se_of_bias

    def test_clipping_trades_variance_for_bias(self):
        report = run_varred(load_sweep_config(alphas=[2.5], workers=4))
        base, clipped = report.row("ipw", 1), report.row("ipw+clip=2.5", 1)
        assert clipped.variance < base.variance
        assert clipped.abs_bias > base.abs_bias
