"""Tests for exact g-computation on small Markov processes."""

import itertools

import numpy as np
import pytest

from app.config import config
from app.errors import BoundaryNotRetainedError, EnumerationGuardError, MalformedMdpError
from app.services.coarsen import coarse_indices, coarsen_panel, coarsen_regime
from app.services.estimators import fit_propensity, ipw, ir, no_terms, state_indicators, tmle
from app.services.exactg import (
    bias_bound,
    check_conditions,
    delayed_effect_mdp,
    exact_grid,
    format_mdp,
    gform_coarsened,
    gform_uncoarsened,
    parse_mdp,
    population_panel,
    random_mdp,
    sample_mdp_panel,
    stochastic_policy_value,
    with_discharge,
)
from app.services.regimes import immediate, jump_at, never, no_treat_before


def _enumerate_value(mdp, actions) -> float:
    """Sum over every state path for a fixed action sequence."""
    T, S = mdp.horizon, mdp.n_states
    total = 0.0
    for path in itertools.product(range(S), repeat=T):
        prob = mdp.initial[path[0]]
        for t in range(T - 1):
            prob *= mdp.transition[t, actions[t], path[t], path[t + 1]]
        total += prob * mdp.outcome[actions[-1], path[-1]]
    return total


def _regimes(horizon: int):
    return [never(horizon), immediate(horizon)] + [jump_at(j, horizon) for j in range(2, horizon + 1)]


class TestThreePointProcess:
    def test_uncoarsened_value(self, three_point_mdp):
        assert gform_uncoarsened(three_point_mdp, never(3)) == pytest.approx(0.425)

    def test_coarsened_and_policy_values(self, three_point_mdp):
        grid = exact_grid(three_point_mdp, 2)
        assert grid.indices.tolist() == [1, 3]
        assert gform_coarsened(three_point_mdp, never(3), grid) == pytest.approx(0.635)
        assert stochastic_policy_value(three_point_mdp, never(3), grid) == pytest.approx(0.635)

    def test_bias_bound(self, three_point_mdp):
        lo, hi = bias_bound(three_point_mdp, never(3), exact_grid(three_point_mdp, 2))
        assert lo == pytest.approx(-0.42)
        assert hi == pytest.approx(0.0, abs=1e-12)

    def test_conditions(self, three_point_mdp):
        report = check_conditions(three_point_mdp, never(3), exact_grid(three_point_mdp, 2))
        assert report.condition_i
        assert not report.condition_ii
        assert report.discrepancy == pytest.approx(-0.21)
        assert report.values_agree is False

    def test_identity_grid_has_no_gap(self, three_point_mdp):
        grid = exact_grid(three_point_mdp, 1)
        assert bias_bound(three_point_mdp, never(3), grid) == pytest.approx((0.0, 0.0))
        report = check_conditions(three_point_mdp, jump_at(2, 3), grid)
        assert report.condition_i and report.condition_ii and report.values_agree


class TestDelayedEffect:
    def test_short_bins_satisfy_the_feature_condition(self):
        mdp = delayed_effect_mdp(horizon=9, omega=2)
        report = check_conditions(mdp, never(9), exact_grid(mdp, 2))
        assert report.condition_i and report.condition_ii
        assert report.values_agree

    def test_wide_bins_break_it(self):
        mdp = delayed_effect_mdp(horizon=9, omega=2)
        report = check_conditions(mdp, never(9), exact_grid(mdp, 4))
        assert not report.condition_ii
        assert report.values_agree is False

    def test_unretained_boundary(self):
        mdp = delayed_effect_mdp(horizon=9, omega=2)
        grid = exact_grid(mdp, 4)
        report = check_conditions(mdp, no_treat_before(4, 9), grid)
        assert not report.condition_i
        assert np.isnan(report.coarsened) and report.values_agree is None
        with pytest.raises(BoundaryNotRetainedError):
            gform_coarsened(mdp, no_treat_before(4, 9), grid)


class TestOracles:
    @pytest.mark.parametrize("seed", range(10))
    def test_uncoarsened_matches_path_enumeration(self, seed):
        mdp = random_mdp(seed, horizon=4, n_states=3)
        for regime in _regimes(4):
            assert gform_uncoarsened(mdp, regime) == pytest.approx(
                _enumerate_value(mdp, regime.values), abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_unit_grid_agrees_everywhere(self, seed):
        mdp = random_mdp(seed, horizon=5, censoring=seed % 2 == 1)
        grid = exact_grid(mdp, 1)
        for regime in _regimes(5):
            exact = gform_uncoarsened(mdp, regime)
            assert gform_coarsened(mdp, regime, grid) == pytest.approx(exact, abs=1e-12)
            assert stochastic_policy_value(mdp, regime, grid) == pytest.approx(exact, abs=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_saturated_regression_on_the_population_is_exact(self, seed):
        mdp = random_mdp(seed, horizon=5, censoring=seed % 3 == 1)
        if seed % 3 == 2:
            mdp = with_discharge(mdp, 0.1, value=0.3)
        population = population_panel(mdp)
        assert population.weights.sum() == pytest.approx(1.0)
        design = state_indicators(mdp.n_states)
        for delta in (1, 2, 4):
            grid = exact_grid(mdp, delta)
            panel = coarsen_panel(population, grid)
            for regime in (never(5), immediate(5), jump_at(3, 5)):
                expected = gform_coarsened(mdp, regime, grid)
                estimate = ir(panel, coarsen_regime(regime, grid), design=design)
                assert estimate.psi_hat == pytest.approx(expected, abs=1e-10)

    @pytest.mark.parametrize("seed", range(6))
    def test_weighting_with_exact_propensities(self, seed):
        mdp = random_mdp(50 + seed, horizon=4, censoring=seed % 2 == 1)
        panel = population_panel(mdp)
        model = fit_propensity(panel, design=state_indicators(mdp.n_states))
        for regime in (never(4), jump_at(3, 4)):
            exact = gform_uncoarsened(mdp, regime)
            assert ipw(panel, regime, model).psi_hat == pytest.approx(exact, abs=1e-6)
            # outcome model is deliberately wrong; the weights carry the estimate
            targeted = tmle(panel, regime, model, design=no_terms)
            assert targeted.psi_hat == pytest.approx(exact, abs=1e-6)

    @pytest.mark.parametrize("seed", range(100))
    def test_gap_lies_inside_the_bound(self, seed):
        mdp = random_mdp(1000 + seed, horizon=5)
        grid = exact_grid(mdp, 2 if seed % 2 else 4)
        for regime in (never(5), jump_at(3, 5), immediate(5)):
            gap = gform_uncoarsened(mdp, regime) - gform_coarsened(mdp, regime, grid)
            lo, hi = bias_bound(mdp, regime, grid)
            assert lo - 1e-10 <= gap <= hi + 1e-10

    @pytest.mark.parametrize("seed", range(24))
    def test_policy_value_matches_coarsened_formula(self, seed):
        horizon = 4 + seed % 2
        mdp = random_mdp(200 + seed, horizon=horizon, censoring=seed % 4 >= 2)
        for delta in (2, 3):
            grid = exact_grid(mdp, delta)
            regimes = [never(horizon), immediate(horizon), jump_at(3, horizon),
                       no_treat_before(int(grid.indices[-2]), horizon)]
            for regime in regimes:
                assert stochastic_policy_value(mdp, regime, grid) == pytest.approx(
                    gform_coarsened(mdp, regime, grid), abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_censored_policy_value_at_wide_bins(self, seed):
        mdp = random_mdp(seed, horizon=7, censoring=True)
        grid = exact_grid(mdp, 3)
        for regime in (immediate(7), no_treat_before(4, 7)):
            assert stochastic_policy_value(mdp, regime, grid) == pytest.approx(
                gform_coarsened(mdp, regime, grid), abs=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_censored_gap_lies_inside_the_bound(self, seed):
        mdp = random_mdp(3000 + seed, horizon=5, censoring=True)
        grid = exact_grid(mdp, 2 if seed % 2 else 4)
        for regime in (never(5), jump_at(3, 5), immediate(5)):
            gap = gform_uncoarsened(mdp, regime) - gform_coarsened(mdp, regime, grid)
            lo, hi = bias_bound(mdp, regime, grid)
            assert lo - 1e-10 <= gap <= hi + 1e-10

    def test_no_treatment_effect_means_no_gap(self):
        mdp = random_mdp(3, horizon=6, treatment_effect=False)
        for delta in (1, 2, 5):
            grid = exact_grid(mdp, delta)
            lo, hi = bias_bound(mdp, never(6), grid)
            assert lo == pytest.approx(0.0, abs=1e-12) and hi == pytest.approx(0.0, abs=1e-12)

    def test_sampled_panel_mean(self, three_point_mdp):
        panel = sample_mdp_panel(three_point_mdp, 5000, seed=4, regime=never(3))
        assert (panel.a == 0).all()
        assert abs(panel.y.mean() - 0.425) < 0.03

    def test_worker_count_does_not_change_the_bound(self):
        mdp = random_mdp(8, horizon=9)
        grid = exact_grid(mdp, 8)
        assert bias_bound(mdp, never(9), grid, workers=1) == bias_bound(mdp, never(9), grid, workers=3)


class TestGuards:
    def test_policy_enumeration_guard(self, three_point_mdp, monkeypatch):
        monkeypatch.setattr(config, "POLICY_GUARD", 2)
        with pytest.raises(EnumerationGuardError):
            bias_bound(three_point_mdp, never(3), exact_grid(three_point_mdp, 2))

    def test_discharge_state_must_be_inert(self):
        mdp = with_discharge(random_mdp(1, horizon=3), 0.2)
        behavior = mdp.behavior.copy()
        behavior[:, mdp.discharge] = 0.5
        with pytest.raises(MalformedMdpError):
            type(mdp)(horizon=3, labels=mdp.labels, initial=mdp.initial, transition=mdp.transition,
                      behavior=behavior, outcome=mdp.outcome, discharge=mdp.discharge)


class TestTextFormat:
    def test_round_trip(self):
        mdp = with_discharge(delayed_effect_mdp(horizon=4, omega=2), 0.05)
        parsed = parse_mdp(format_mdp(mdp))
        assert parsed.labels == mdp.labels and parsed.features == mdp.features
        assert parsed.discharge == mdp.discharge
        np.testing.assert_allclose(parsed.transition, mdp.transition)
        assert gform_uncoarsened(parsed, never(4)) == pytest.approx(gform_uncoarsened(mdp, never(4)))

    @pytest.mark.parametrize("text", [
        "horizon 2\nstates a\ninitial : 1\nteleport a : 1\n",
        "horizon 2\nstates a b\ninitial : 0.5 0.5\n",
        "horizon 2\nstates a\ninitial : 1\ntransition 5 0 a : 1\n",
        ("horizon 1\nstates a b\ninitial : 0.5 0.5\nbehavior * a : 0.5\nbehavior * b : 0.5\n"
         "outcome 0 a : 0\noutcome 1 a : 0\noutcome 0 b : 1\noutcome 1 b : 1\n"
         "censoring * a : 0.1\n"),
        "states a\ninitial : 1\n",
    ])
    def test_malformed(self, text):
        with pytest.raises(MalformedMdpError):
            parse_mdp(text)

    def test_rows_must_sum_to_one(self, three_point_mdp):
        text = format_mdp(three_point_mdp).replace("transition * 0 low : 0.8 0.2",
                                                     "transition * 0 low : 0.8 0.3")
        with pytest.raises(MalformedMdpError):
            parse_mdp(text)

    def test_grid_must_match_horizon(self, three_point_mdp):
        with pytest.raises(MalformedMdpError):
            stochastic_policy_value(three_point_mdp, never(3), coarse_indices(5, 2))
