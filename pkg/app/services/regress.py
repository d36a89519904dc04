"""Weighted least squares, IRLS logistic regression and the offset-intercept fluctuation."""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, logit

from app.config import config
from app.errors import DataError, ZeroWeightError

logger = logging.getLogger(__name__)

SCORE_TOL = 1e-8
LOGLIK_SCORE_TOL = 1e-6
LOGLIK_RTOL = 1e-10
SEPARATION_ETA = 15.0


@dataclass(frozen=True)
class LinearFit:
    coefficients: np.ndarray
    column_names: tuple[str, ...]
    n_used: int
    degenerate: bool = False

    def predict(self, design: np.ndarray) -> np.ndarray:
        return np.asarray(design, dtype=float) @ self.coefficients


@dataclass(frozen=True)
class LogisticFit:
    """Fitted log-odds. ``fallback`` is set whenever IRLS did not converge."""

    coefficients: np.ndarray
    column_names: tuple[str, ...]
    converged: bool
    fallback: Optional[str]
    n_used: int
    iterations: int = 0
    score_norm: float = 0.0

    def predict_raw(self, design: np.ndarray) -> np.ndarray:
        return expit(np.asarray(design, dtype=float) @ self.coefficients)

    def predict(self, design: np.ndarray) -> np.ndarray:
        """Probabilities floored into [floor, 1 - floor]."""
        floor = config.PROB_FLOOR
        return np.clip(self.predict_raw(design), floor, 1.0 - floor)


def with_intercept(columns: np.ndarray) -> np.ndarray:
    columns = np.asarray(columns, dtype=float)
    return np.hstack([np.ones((columns.shape[0], 1)), columns])


def _names(width: int, column_names: Optional[Sequence[str]]) -> tuple[str, ...]:
    if column_names is None:
        return tuple(["intercept"] + [f"x{i}" for i in range(1, width)])
    if len(column_names) != width:
        raise DataError(f"{len(column_names)} column names for {width} columns")
    return tuple(column_names)


def _prepare(
    design: np.ndarray, response: np.ndarray, weights: Optional[np.ndarray]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float).ravel()
    if X.ndim != 2:
        raise DataError(f"design must be a matrix, got shape {X.shape}")
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float).ravel()
    if not X.shape[0] == y.size == w.size:
        raise DataError(f"row mismatch: design {X.shape[0]}, response {y.size}, weights {w.size}")
    if (w < 0).any():
        raise DataError("weights must be non-negative")
    used = w > 0
    if not np.isfinite(X[used]).all() or not np.isfinite(y[used]).all():
        raise DataError("design and response must be finite on rows with positive weight")
    return X[used], y[used], w[used]


def wls_fit(
    design: np.ndarray,
    response: np.ndarray,
    weights: Optional[np.ndarray] = None,
    column_names: Optional[Sequence[str]] = None,
) -> LinearFit:
    """Weighted least squares via an SVD-based solve on sqrt(w)-scaled rows.

    A rank-deficient design returns the minimum-norm solution with
    ``degenerate`` set.
    """
    X, y, w = _prepare(design, response, weights)
    names = _names(X.shape[1], column_names)
    if w.size == 0:
        raise ZeroWeightError("least squares needs at least one positive weight")
    sw = np.sqrt(w)
    coefficients, _, rank, _ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    degenerate = int(rank) < X.shape[1]
    if degenerate:
        logger.debug("Rank-deficient design: rank %d < %d columns", rank, X.shape[1])
    return LinearFit(coefficients=coefficients, column_names=names, n_used=int(w.size),
                     degenerate=degenerate)


def _loglik(X: np.ndarray, y: np.ndarray, w: np.ndarray, theta: np.ndarray) -> float:
    eta = X @ theta
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def _fallback(tag: str, rate: float, width: int, names: tuple[str, ...], n_used: int,
              iterations: int = 0) -> LogisticFit:
    floor = config.PROB_FLOOR
    coefficients = np.zeros(width)
    if width:
        coefficients[0] = logit(np.clip(rate, floor, 1.0 - floor))
    logger.debug("Logistic fallback (%s): intercept-only rate %.3g over %d rows", tag, rate, n_used)
    return LogisticFit(coefficients=coefficients, column_names=names, converged=False,
                       fallback=tag, n_used=n_used, iterations=iterations)


def logit_fit(
    design: np.ndarray,
    response: np.ndarray,
    weights: Optional[np.ndarray] = None,
    column_names: Optional[Sequence[str]] = None,
    max_iter: Optional[int] = None,
) -> LogisticFit:
    """Weighted Bernoulli maximum likelihood by iteratively reweighted least squares.

    The first design column is taken to be the intercept. Constant responses,
    separation, a singular step or hitting the iteration cap fall back to the
    intercept-only empirical rate clamped to the probability floor.
    """
    X, y, w = _prepare(design, response, weights)
    names = _names(X.shape[1], column_names)
    if not np.isin(y, (0.0, 1.0)).all():
        raise DataError("logistic response must be 0/1")
    max_iter = config.IRLS_MAX_ITER if max_iter is None else max_iter

    if w.size == 0:
        return _fallback("empty", 0.0, X.shape[1], names, 0)
    w = w / w.mean()
    rate = float(np.sum(w * y) / np.sum(w))
    if rate <= 0.0 or rate >= 1.0:
        return _fallback("constant-response", rate, X.shape[1], names, int(w.size))

    theta = np.zeros(X.shape[1])
    loglik = _loglik(X, y, w, theta)
    for iteration in range(1, max_iter + 1):
        p = expit(X @ theta)
        score = X.T @ (w * (y - p))
        score_norm = float(np.max(np.abs(score))) if score.size else 0.0
        if score_norm < SCORE_TOL:
            return LogisticFit(theta, names, True, None, int(w.size), iteration - 1, score_norm)

        hessian = X.T @ (X * (w * p * (1.0 - p))[:, None])
        step = np.linalg.lstsq(hessian, score, rcond=None)[0]
        if not np.isfinite(step).all():
            return _fallback("singular", rate, X.shape[1], names, int(w.size), iteration)
        theta = theta + step
        eta = X @ theta
        if not np.isfinite(eta).all() or np.max(np.abs(eta)) > SEPARATION_ETA:
            return _fallback("separation", rate, X.shape[1], names, int(w.size), iteration)

        new_loglik = _loglik(X, y, w, theta)
        if abs(new_loglik - loglik) <= LOGLIK_RTOL * max(abs(loglik), 1.0):
            p = expit(eta)
            score_norm = float(np.max(np.abs(X.T @ (w * (y - p)))))
            if score_norm < LOGLIK_SCORE_TOL:
                return LogisticFit(theta, names, True, None, int(w.size), iteration, score_norm)
        loglik = new_loglik

    return _fallback("max-iter", rate, X.shape[1], names, int(w.size), max_iter)


def offset_intercept_fit(
    response: np.ndarray, offset: np.ndarray, weights: Optional[np.ndarray] = None
) -> float:
    """Intercept of a weighted linear fluctuation with a fixed offset."""
    r = np.asarray(response, dtype=float).ravel()
    o = np.asarray(offset, dtype=float).ravel()
    w = np.ones(r.size) if weights is None else np.asarray(weights, dtype=float).ravel()
    if not r.size == o.size == w.size:
        raise DataError(f"length mismatch: response {r.size}, offset {o.size}, weights {w.size}")
    total = float(np.sum(w))
    if total <= 0.0:
        raise ZeroWeightError("fluctuation needs positive total weight")
    return float(np.sum(w * (r - o)) / total)
