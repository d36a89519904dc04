"""IPW, iterative regression and TMLE for static single-jump regimes.

All estimators share one panel convention (see ``app.services.panel``):
within a time point features come first, then censoring, then treatment.
Censoring is treated as a second absorbing treatment whose regime value is
always "uncensored". Subjects that left (death/discharge) before time t
take no new treatment or censoring decisions and keep their outcome as Q.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from app.config import config
from app.errors import ConfigError, DataError, NotFollowedError
from app.models import Estimate, EstimateDiagnostics, EstimatorSpec
from app.services.panel import Panel
from app.services.regimes import TreatmentRegime
from app.services.regress import (
    LinearFit,
    LogisticFit,
    logit_fit,
    offset_intercept_fit,
    with_intercept,
    wls_fit,
)
from app.utils.parallel import map_ordered
from app.utils.rng import substream

logger = logging.getLogger(__name__)

Design = Callable[[np.ndarray, np.ndarray], np.ndarray]


# Covariate designs: (V rows, L_t rows) -> columns, intercept added by the caller.

def linear_terms(v: np.ndarray, l_t: np.ndarray) -> np.ndarray:
    return np.hstack([l_t, v])


def no_terms(v: np.ndarray, l_t: np.ndarray) -> np.ndarray:
    return np.empty((v.shape[0], 0))


def state_indicators(n_states: int) -> Design:
    """Saturated design for a discrete state stored in the first feature."""

    def design(v: np.ndarray, l_t: np.ndarray) -> np.ndarray:
        state = l_t[:, 0].astype(int)
        return (state[:, None] == np.arange(1, n_states)[None, :]).astype(float)

    return design


@dataclass(frozen=True)
class PropensityModel:
    """Per-time (or time-pooled) logistic models for treatment and censoring."""

    treatment: tuple[LogisticFit, ...]
    censoring: Optional[tuple[LogisticFit, ...]]
    design: Design
    pooled_time: bool

    def _fit(self, fits: tuple[LogisticFit, ...], t: int) -> LogisticFit:
        return fits[0] if self.pooled_time else fits[t]

    def jump_probability(self, panel: Panel, t: int, rows: np.ndarray) -> np.ndarray:
        X = with_intercept(self.design(panel.v[rows], panel.l[rows, t]))
        return self._fit(self.treatment, t).predict(X)

    def censor_probability(self, panel: Panel, t: int, rows: np.ndarray) -> np.ndarray:
        if self.censoring is None:
            return np.zeros(int(np.count_nonzero(rows)))
        X = with_intercept(self.design(panel.v[rows], panel.l[rows, t]))
        return self._fit(self.censoring, t).predict(X)

    @property
    def fallback_fits(self) -> int:
        fits = self.treatment + (self.censoring or ())
        return sum(1 for fit in fits if fit.fallback is not None)


def _previous(matrix: np.ndarray) -> np.ndarray:
    shifted = np.zeros_like(matrix)
    shifted[:, 1:] = matrix[:, :-1]
    return shifted


def _logistic(panel: Panel, design: Design, rows_by_t: np.ndarray, response: np.ndarray,
              pooled: bool) -> tuple[LogisticFit, ...]:
    """One fit per time on ``rows_by_t[:, t]`` or one fit on the stacked rows."""
    blocks = []
    for t in range(panel.t):
        rows = rows_by_t[:, t]
        X = with_intercept(design(panel.v[rows], panel.l[rows, t]))
        blocks.append((X, response[rows, t], panel.weights[rows]))
    if pooled:
        X = np.vstack([block[0] for block in blocks])
        y = np.concatenate([block[1] for block in blocks])
        w = np.concatenate([block[2] for block in blocks])
        return (logit_fit(X, y, w),)
    return tuple(logit_fit(X, y, w) for X, y, w in blocks)


def fit_propensity(panel: Panel, pooled_time: bool = False,
                   design: Design = linear_terms) -> PropensityModel:
    """Fit P(A_t = 1 | A_{t-1} = 0, L_t, V) and, with censoring, P(C_t = 1 | C_{t-1} = 0, L_t, V).

    Treatment rows at risk at t are untreated before t, uncensored at t and
    still present; censoring rows at risk are uncensored before t and still
    present.
    """
    present = ~panel.discharged()
    uncensored = panel.uncensored()
    at_risk = (_previous(panel.a) == 0) & uncensored & present
    treatment = _logistic(panel, design, at_risk, panel.a, pooled_time)

    censoring = None
    if panel.c is not None:
        at_risk_c = (_previous(panel.c) == 0) & present
        censoring = _logistic(panel, design, at_risk_c, panel.c, pooled_time)

    model = PropensityModel(treatment=treatment, censoring=censoring, design=design,
                            pooled_time=pooled_time)
    if model.fallback_fits:
        logger.debug("Propensity model: %d of %d fits fell back", model.fallback_fits,
                     len(treatment) + len(censoring or ()))
    return model


def follows_through(panel: Panel, regime: TreatmentRegime) -> np.ndarray:
    """(n, t) mask: the subject matched the regime's specified prefix and stayed uncensored.

    Once a subject has left, its treatment no longer counts against the regime.
    """
    regime.require_length(panel.t)
    k = regime.n_specified
    match = panel.uncensored().copy()
    match[:, :k] &= (panel.a[:, :k] == regime.prefix[None, :]) | panel.discharged()[:, :k]
    return np.logical_and.accumulate(match, axis=1)


def cumulative_probs(model: PropensityModel, panel: Panel, regime: TreatmentRegime) -> np.ndarray:
    """(n, t) product of per-step regime probabilities through each time, NaN for non-followers.

    After the regime has jumped, and for subjects that already left, the
    treatment factor is 1. Censoring factors are the probability of staying
    uncensored.
    """
    followers = follows_through(panel, regime)
    present = ~panel.discharged()
    k = regime.n_specified
    n, T = panel.n, panel.t
    cumulative = np.full((n, T), np.nan)
    running = np.ones(n)
    for t in range(T):
        rows = followers[:, t - 1] if t > 0 else np.ones(n, dtype=bool)
        factor = np.ones(n)

        decide = rows & present[:, t]
        if model.censoring is not None and decide.any():
            factor[decide] *= 1.0 - model.censor_probability(panel, t, decide)

        previous = regime.values[t - 1] if t > 0 else 0
        if t < k and previous == 0 and decide.any():
            p = model.jump_probability(panel, t, decide)
            factor[decide] *= p if regime.values[t] == 1 else 1.0 - p

        running = running * factor
        cumulative[followers[:, t], t] = running[followers[:, t]]
    return cumulative


def cumulative_prob(model: PropensityModel, panel: Panel, subject: int,
                    regime: TreatmentRegime) -> float:
    """g-hat of one subject over the whole sequence."""
    value = cumulative_probs(model, panel, regime)[subject, -1]
    if not np.isfinite(value):
        raise NotFollowedError(f"subject {subject} did not follow regime {regime}")
    return float(value)


def clip_weights(weights: np.ndarray, alpha: float) -> np.ndarray:
    """Clamp into the [alpha, 100 - alpha] empirical percentiles (linear interpolation)."""
    weights = np.asarray(weights, dtype=float)
    if weights.size == 0:
        raise DataError("cannot clip an empty weight vector")
    if not 0.0 <= alpha < 50.0:
        raise ConfigError(f"clipping percentile must lie in [0, 50), got {alpha}")
    lo, hi = np.percentile(weights, [alpha, 100.0 - alpha])
    return np.clip(weights, lo, hi)


def _ess(weights: np.ndarray, freq: np.ndarray) -> float:
    return float(np.sum(freq * weights) ** 2 / np.sum(freq * weights ** 2))


def _undefined(method: str, n_followers: int, diagnostics: EstimateDiagnostics) -> Estimate:
    return Estimate(method=method, psi_hat=None, n_followers=n_followers, undefined=True,
                    diagnostics=diagnostics)


def ipw(panel: Panel, regime: TreatmentRegime, model: PropensityModel,
        clip_alpha: Optional[float] = None) -> Estimate:
    """Hajek ratio over followers of the regime (uncensored through the end)."""
    cumulative = cumulative_probs(model, panel, regime)
    followers = np.isfinite(cumulative[:, -1])
    freq = panel.weights[followers]
    n_followers = int(np.count_nonzero(followers))
    diagnostics = EstimateDiagnostics(fallback_fits=model.fallback_fits)
    if n_followers == 0 or freq.sum() <= 0:
        return _undefined("ipw", n_followers, diagnostics)

    weights = 1.0 / cumulative[followers, -1]
    if clip_alpha is not None:
        weights = clip_weights(weights, clip_alpha)
    total = freq * weights
    psi = float(np.sum(total * panel.y[followers]) / np.sum(total))
    diagnostics = EstimateDiagnostics(
        weight_min=float(weights.min()), weight_max=float(weights.max()),
        ess=_ess(weights, freq), fallback_fits=model.fallback_fits,
    )
    return Estimate(method="ipw", psi_hat=psi, n_followers=n_followers, diagnostics=diagnostics)


def naive_mean(panel: Panel, regime: TreatmentRegime) -> Estimate:
    """Unweighted mean outcome of the regime's followers."""
    followers = follows_through(panel, regime)[:, -1]
    n_followers = int(np.count_nonzero(followers))
    freq = panel.weights[followers]
    if n_followers == 0 or freq.sum() <= 0:
        return _undefined("naive", n_followers, EstimateDiagnostics())
    psi = float(np.sum(freq * panel.y[followers]) / freq.sum())
    return Estimate(method="naive", psi_hat=psi, n_followers=n_followers)


def _q_design(panel: Panel, design: Design, rows: np.ndarray, t: int,
              history: Optional[np.ndarray]) -> np.ndarray:
    X = with_intercept(design(panel.v[rows], panel.l[rows, t]))
    if history is None:
        return X
    if history.ndim == 1:
        history = np.broadcast_to(history, (X.shape[0], history.size))
    return np.hstack([X, history])


def _backward(
    panel: Panel,
    regime: TreatmentRegime,
    method: str,
    design: Design,
    pool_regimes: bool,
    cumulative: Optional[np.ndarray] = None,
    clip_alpha: Optional[float] = None,
) -> Estimate:
    """Backward recursion shared by IR and TMLE (targeting when ``cumulative`` is given).

    Without pooling Q_t is fit on followers through t and evaluated on
    followers through t-1. With regime pooling the treatment history up to
    the specified boundary enters the design, the fit uses every uncensored
    subject and evaluation sets the history to the regime for every
    subject uncensored through t-1.
    """
    followers = follows_through(panel, regime)
    uncensored = panel.uncensored()
    gone = panel.discharged()
    k = regime.n_specified
    n, T = panel.n, panel.t
    everyone = np.ones(n, dtype=bool)
    n_followers = int(np.count_nonzero(followers[:, -1]))

    q_next = panel.y.astype(float).copy()
    previous_fit: Optional[LinearFit] = None
    degenerate = rank_deficient = 0
    max_eps = 0.0

    for t in reversed(range(T)):
        before = everyone if t == 0 else None
        if pool_regimes:
            fit_rows = uncensored[:, t] & ~gone[:, t] & np.isfinite(q_next)
            eval_rows = before if before is not None else uncensored[:, t - 1]
            width = min(t + 1, k)
            fit_history = panel.a[fit_rows, :width].astype(float) if width else None
            eval_history = regime.values[:width].astype(float) if width else None
        else:
            fit_rows = followers[:, t] & ~gone[:, t]
            eval_rows = before if before is not None else followers[:, t - 1]
            fit_history = eval_history = None

        X_fit = _q_design(panel, design, fit_rows, t, fit_history)
        fit_weights = panel.weights[fit_rows]
        if fit_weights.sum() > 0:
            fit = wls_fit(X_fit, q_next[fit_rows], fit_weights)
            rank_deficient += int(fit.degenerate)
        elif previous_fit is not None and previous_fit.coefficients.size == X_fit.shape[1]:
            logger.debug("%s: no followers at t=%d, carrying the t=%d fit back", method, t + 1, t + 2)
            fit = previous_fit
            degenerate += 1
        else:
            logger.debug("%s: no followers at t=%d and no fit to carry back", method, t + 1)
            return _undefined(method, n_followers, EstimateDiagnostics(
                degenerate_steps=degenerate + 1, rank_deficient_fits=rank_deficient))

        q_t = np.full(n, np.nan)
        live = eval_rows & ~gone[:, t]
        if live.any():
            q_t[live] = fit.predict(_q_design(panel, design, live, t, eval_history))
        left = eval_rows & gone[:, t]
        q_t[left] = panel.y[left]

        if cumulative is not None:
            target = followers[:, t] & ~gone[:, t]
            weights = panel.weights[target] / cumulative[target, t]
            if clip_alpha is not None and weights.size:
                weights = clip_weights(weights, clip_alpha)
            if weights.size and weights.sum() > 0:
                eps = offset_intercept_fit(q_next[target], q_t[target], weights)
                q_t[live] += eps
                max_eps = max(max_eps, abs(eps))
            else:
                degenerate += 1

        q_next = q_t
        previous_fit = fit

    psi = float(np.sum(panel.weights * q_next) / np.sum(panel.weights))
    diagnostics = EstimateDiagnostics(degenerate_steps=degenerate, rank_deficient_fits=rank_deficient)
    if cumulative is not None:
        diagnostics.max_abs_fluctuation = max_eps
        final = np.isfinite(cumulative[:, -1])
        if final.any():
            weights = 1.0 / cumulative[final, -1]
            diagnostics.weight_min = float(weights.min())
            diagnostics.weight_max = float(weights.max())
            diagnostics.ess = _ess(weights, panel.weights[final])
    return Estimate(method=method, psi_hat=psi, n_followers=n_followers, diagnostics=diagnostics)


def ir(panel: Panel, regime: TreatmentRegime, pool_regimes: bool = False,
       design: Design = linear_terms) -> Estimate:
    """Iterative conditional expectation (parametric g-computation)."""
    regime.require_length(panel.t)
    return _backward(panel, regime, "ir", design, pool_regimes)


def tmle(
    panel: Panel,
    regime: TreatmentRegime,
    model: Optional[PropensityModel],
    pool_regimes: bool = False,
    clip_alpha: Optional[float] = None,
    design: Design = linear_terms,
    fluctuate: bool = True,
) -> Estimate:
    """IR with a linear fluctuation of each Q_t weighted by 1 / g-hat through t.

    ``fluctuate=False`` forces every fluctuation intercept to zero.
    """
    regime.require_length(panel.t)
    if model is None:
        return _undefined("tmle", 0, EstimateDiagnostics())
    cumulative = cumulative_probs(model, panel, regime) if fluctuate else None
    estimate = _backward(panel, regime, "tmle", design, pool_regimes, cumulative, clip_alpha)
    estimate.diagnostics.fallback_fits = model.fallback_fits
    return estimate


def run_estimator(
    panel: Panel,
    regime: TreatmentRegime,
    spec: EstimatorSpec,
    model: Optional[PropensityModel] = None,
    q_design: Design = linear_terms,
    g_design: Design = linear_terms,
) -> Estimate:
    """Dispatch on ``spec.method``, fitting the propensity model when needed."""
    if spec.needs_propensity and model is None:
        model = fit_propensity(panel, pooled_time=spec.pool_time, design=g_design)
    if spec.method == "ipw":
        return ipw(panel, regime, model, clip_alpha=spec.clip_alpha)
    if spec.method == "ir":
        return ir(panel, regime, pool_regimes=spec.pool_regimes, design=q_design)
    if spec.method == "tmle":
        return tmle(panel, regime, model, pool_regimes=spec.pool_regimes,
                    clip_alpha=spec.clip_alpha, design=q_design)
    return naive_mean(panel, regime)


def estimate_ate(
    panel: Panel,
    regime0: TreatmentRegime,
    regime1: TreatmentRegime,
    spec: EstimatorSpec,
    model: Optional[PropensityModel] = None,
) -> tuple[Optional[float], Estimate, Estimate]:
    """psi(regime0) - psi(regime1) from two estimator calls sharing one propensity model."""
    if spec.needs_propensity and model is None:
        model = fit_propensity(panel, pooled_time=spec.pool_time)
    first = run_estimator(panel, regime0, spec, model)
    second = run_estimator(panel, regime1, spec, model)
    if first.psi_hat is None or second.psi_hat is None:
        return None, first, second
    return first.psi_hat - second.psi_hat, first, second


@dataclass(frozen=True)
class BootstrapInterval:
    lo: Optional[float]
    hi: Optional[float]
    estimates: np.ndarray
    skipped: int


def bootstrap_ci(
    panel: Panel,
    regime: TreatmentRegime,
    spec: EstimatorSpec,
    b: Optional[int] = None,
    level: float = 95.0,
    seed: int = 0,
    workers: int = 1,
) -> BootstrapInterval:
    """Percentile bootstrap over subjects; every replicate refits all models.

    Replicate r resamples with substream r of ``seed``, so the interval does
    not depend on ``workers``. Replicates without followers are skipped and
    counted.
    """
    b = config.BOOTSTRAP_REPLICATES if b is None else b
    if b < 2:
        raise ConfigError(f"bootstrap needs at least 2 replicates, got {b}")
    if not 0.0 < level < 100.0:
        raise ConfigError(f"confidence level must lie in (0, 100), got {level}")

    def replicate(r: int) -> Optional[float]:
        index = substream(seed, r).integers(0, panel.n, panel.n)
        return run_estimator(panel.take(index), regime, spec).psi_hat

    results = map_ordered(replicate, range(b), workers=workers)
    estimates = np.array([value for value in results if value is not None], dtype=float)
    skipped = b - estimates.size
    if skipped:
        logger.warning("Bootstrap: skipped %d of %d replicates without followers", skipped, b)
    if estimates.size == 0:
        return BootstrapInterval(lo=None, hi=None, estimates=estimates, skipped=skipped)
    tail = (100.0 - level) / 2.0
    lo, hi = np.percentile(estimates, [tail, 100.0 - tail])
    return BootstrapInterval(lo=float(lo), hi=float(hi), estimates=estimates, skipped=skipped)
