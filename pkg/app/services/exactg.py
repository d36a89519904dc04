"""Exact g-computation on small finite-state, finite-horizon Markov processes.

Time runs 1..T. At each time the state L_t is revealed, then (optionally)
censoring, then treatment. ``transition[t - 1, a]`` moves L_t to L_{t+1}
given A_t = a; ``behavior[t - 1, l]`` is P(A_t = 1 | A_{t-1} = 0, L_t = l)
and treatment is absorbing; ``outcome[a, l]`` is E[Y | A_T = a, L_T = l].
Baseline covariates are folded into L_1.

All values are computed by forward dynamic programming over joint
(A, L) marginals. On the fine grid censoring is intervened away (c = 0).
Values on a coarse grid (``gform_coarsened``, ``stochastic_policy_value``,
``bias_bound``) condition on staying uncensored inside each bin the way an
estimator fit on coarsened data does.
"""

import itertools
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from app.config import config
from app.errors import BoundaryNotRetainedError, EnumerationGuardError, MalformedMdpError
from app.models import ConditionReport
from app.services.coarsen import CoarseGrid, coarse_indices
from app.services.panel import Panel
from app.services.regimes import TreatmentRegime
from app.utils.parallel import map_ordered
from app.utils.rng import substream

logger = logging.getLogger(__name__)

TOL = 1e-12
AGREE_TOL = 1e-10
BLOCK = 4096

FIXED, BEHAVIOR, FREE = 0, 1, 2


@dataclass(frozen=True)
class DiscreteMdp:
    horizon: int
    labels: tuple[str, ...]
    initial: np.ndarray
    transition: np.ndarray
    behavior: np.ndarray
    outcome: np.ndarray
    censoring: Optional[np.ndarray] = None
    discharge: Optional[int] = None
    features: Optional[tuple[str, ...]] = field(default=None)

    def __post_init__(self) -> None:
        T, S = self.horizon, len(self.labels)
        if T < 1 or S < 1:
            raise MalformedMdpError("need a horizon >= 1 and at least one state")
        if len(set(self.labels)) != S:
            raise MalformedMdpError("state labels must be unique")
        arrays = {
            "initial": (np.asarray(self.initial, dtype=float), (S,)),
            "transition": (np.asarray(self.transition, dtype=float), (T - 1, 2, S, S)),
            "behavior": (np.asarray(self.behavior, dtype=float), (T, S)),
            "outcome": (np.asarray(self.outcome, dtype=float), (2, S)),
        }
        if self.censoring is not None:
            arrays["censoring"] = (np.asarray(self.censoring, dtype=float), (T, S))
        for name, (value, shape) in arrays.items():
            if value.shape != shape:
                raise MalformedMdpError(f"{name} has shape {value.shape}, expected {shape}")
            if not np.isfinite(value).all():
                raise MalformedMdpError(f"{name} has non-finite entries")
            object.__setattr__(self, name, value)

        for name in ("initial", "transition", "behavior", "censoring"):
            value = getattr(self, name)
            if value is not None and ((value < -TOL) | (value > 1 + TOL)).any():
                raise MalformedMdpError(f"{name} probabilities must lie in [0, 1]")
        if abs(self.initial.sum() - 1.0) > TOL:
            raise MalformedMdpError("initial distribution must sum to 1")
        if T > 1 and (np.abs(self.transition.sum(axis=-1) - 1.0) > TOL).any():
            raise MalformedMdpError("every transition row must sum to 1")

        if self.discharge is not None:
            d = self.discharge
            if not 0 <= d < S:
                raise MalformedMdpError("discharge state out of range")
            if T > 1 and (np.abs(self.transition[:, :, d, d] - 1.0) > TOL).any():
                raise MalformedMdpError("discharge state must be absorbing")
            if (self.behavior[:, d] != 0).any():
                raise MalformedMdpError("no treatment may start in the discharge state")
            if self.censoring is not None and (self.censoring[:, d] != 0).any():
                raise MalformedMdpError("no censoring may occur in the discharge state")
            if abs(self.outcome[0, d] - self.outcome[1, d]) > TOL:
                raise MalformedMdpError("the discharge outcome cannot depend on treatment")

        features = self.labels if self.features is None else tuple(self.features)
        if len(features) != S:
            raise MalformedMdpError("one observed feature label is needed per state")
        object.__setattr__(self, "features", features)

    @property
    def n_states(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise MalformedMdpError(f"unknown state {label!r}") from None

    def feature_projection(self) -> np.ndarray:
        """(S, F) one-hot map from states to observed feature values."""
        names = list(dict.fromkeys(self.features))
        projection = np.zeros((self.n_states, len(names)))
        for state, name in enumerate(self.features):
            projection[state, names.index(name)] = 1.0
        return projection

    def uncensored(self) -> "DiscreteMdp":
        return replace(self, censoring=None)


# Forward dynamic programming

def _act(mu: np.ndarray, kind: int, arg: int, p: np.ndarray) -> np.ndarray:
    """Apply one time's action to (..., 2, S) marginals; ``p`` is the jump probability."""
    if kind == FIXED:
        total = mu.sum(axis=-2)
        out = np.zeros_like(mu)
        out[..., arg, :] = total
        return out
    jump = mu[..., 0, :] * p
    return np.stack([mu[..., 0, :] - jump, mu[..., 1, :] + jump], axis=-2)


def _forward(mdp: DiscreteMdp, kind: np.ndarray, arg: np.ndarray,
             decisions: Optional[np.ndarray] = None) -> np.ndarray:
    """Policy values for a batch of (n_free, S) decision tables, or one value without them."""
    batch = 1 if decisions is None else decisions.shape[0]
    mu = np.zeros((batch, 2, mdp.n_states))
    mu[:, 0] = mdp.initial
    for t in range(mdp.horizon):
        p = decisions[:, arg[t], :] if kind[t] == FREE else mdp.behavior[t][None, :]
        mu = _act(mu, kind[t], arg[t], p)
        if t < mdp.horizon - 1:
            mu = np.einsum("bai,aij->baj", mu, mdp.transition[t])
    return np.einsum("bai,ai->b", mu, mdp.outcome)


def _forward_in_bins(mdp: DiscreteMdp, kind: np.ndarray, arg: np.ndarray, retained: np.ndarray,
                     decisions: Optional[np.ndarray] = None) -> np.ndarray:
    """Policy values on the law seen through the grid when censoring is present.

    Each bin is conditioned on staying uncensored at its interior times given
    the (A, L) state at the bin's start, as in ``gform_coarsened``. Free
    decision tables are (n_free, S, S): bin-start state, then current state.
    """
    batch = 1 if decisions is None else decisions.shape[0]
    S = mdp.n_states
    points = np.flatnonzero(retained)
    mu = np.zeros((batch, 2, S))
    mu[:, 0] = mdp.initial
    for step, u in enumerate(points):
        mu = _act(mu, kind[u], arg[u], mdp.behavior[u][None, :])
        if step == len(points) - 1:
            break
        w = points[step + 1]
        cur = np.zeros((batch, 2, S, 2, S))
        for a in (0, 1):
            cur[:, a, :, a, :] = np.eye(S)
        for t in range(u, w):
            cur = np.einsum("boiak,akj->boiaj", cur, mdp.transition[t])
            if t + 1 < w:
                cur = cur * (1.0 - mdp.censoring[t + 1])
                if kind[t + 1] == FREE:
                    p = decisions[:, arg[t + 1]][:, None, :, :]
                else:
                    p = mdp.behavior[t + 1]
                cur = _act(cur, kind[t + 1], arg[t + 1], p)
        total = cur.sum(axis=(3, 4), keepdims=True)
        cur = np.divide(cur, total, out=np.zeros_like(cur), where=total > 0)
        mu = np.einsum("bai,baicj->bcj", mu, cur)
    return np.einsum("bai,ai->b", mu, mdp.outcome)


def _coarse_values(mdp: DiscreteMdp, kind: np.ndarray, arg: np.ndarray, retained: np.ndarray,
                   decisions: Optional[np.ndarray] = None) -> np.ndarray:
    if mdp.censoring is None:
        return _forward(mdp, kind, arg, decisions)
    return _forward_in_bins(mdp, kind, arg, retained, decisions)


def _prefix_plan(mdp: DiscreteMdp, regime: TreatmentRegime,
                 retained: Optional[np.ndarray] = None, free: bool = False):
    """Per-time action kinds: the regime at (retained) prefix times, behavior elsewhere."""
    regime.require_length(mdp.horizon)
    k = regime.n_specified
    kind = np.full(mdp.horizon, BEHAVIOR)
    arg = np.zeros(mdp.horizon, dtype=int)
    n_free = 0
    for t in range(k):
        if retained is None or retained[t]:
            kind[t], arg[t] = FIXED, regime.values[t]
        elif free:
            kind[t], arg[t] = FREE, n_free
            n_free += 1
    return kind, arg, n_free


def _retained_mask(mdp: DiscreteMdp, grid: CoarseGrid) -> np.ndarray:
    if grid.t_star != mdp.horizon:
        raise MalformedMdpError(f"grid covers {grid.t_star} points, horizon is {mdp.horizon}")
    mask = np.zeros(mdp.horizon, dtype=bool)
    mask[grid.indices - 1] = True
    return mask


def _check_boundary(regime: TreatmentRegime, grid: CoarseGrid) -> None:
    if regime.boundary is not None and not grid.retains(regime.boundary):
        raise BoundaryNotRetainedError(f"regime boundary {regime.boundary} is not on the grid")


def gform_uncoarsened(mdp: DiscreteMdp, regime: TreatmentRegime) -> float:
    """Fine-grid g-formula; after an unspecified boundary treatment follows the behavior policy."""
    kind, arg, _ = _prefix_plan(mdp, regime)
    return float(_forward(mdp, kind, arg)[0])


def stochastic_policy_value(mdp: DiscreteMdp, regime: TreatmentRegime, grid: CoarseGrid) -> float:
    """Value of following the regime at retained times and the behavior policy elsewhere.

    Setting the regime's action at a retained time overrides absorption.
    With censoring the value is taken on the bin-conditioned law that
    ``gform_coarsened`` uses.
    """
    _check_boundary(regime, grid)
    retained = _retained_mask(mdp, grid)
    kind, arg, _ = _prefix_plan(mdp, regime, retained)
    return float(_coarse_values(mdp, kind, arg, retained)[0])


def _bin_kernel(mdp: DiscreteMdp, start: int, stop: int) -> np.ndarray:
    """(2, S, 2, S) law of (A_{stop-1}, L_stop) given (A_start, L_start), 0-based times.

    Interior times follow the behavior policy; with censoring the kernel is
    conditioned on staying uncensored at the interior times.
    """
    S = mdp.n_states
    cur = np.zeros((2, S, 2, S))
    for a in (0, 1):
        cur[a, :, a, :] = np.eye(S)
    for t in range(start, stop):
        cur = np.einsum("oiak,akj->oiaj", cur, mdp.transition[t])
        if t + 1 < stop:
            if mdp.censoring is not None:
                cur = cur * (1.0 - mdp.censoring[t + 1])[None, None, None, :]
            p = mdp.behavior[t + 1][None, None, :]
            jump = cur[:, :, 0] * p
            cur = np.stack([cur[:, :, 0] - jump, cur[:, :, 1] + jump], axis=2)
    if mdp.censoring is not None:
        total = cur.sum(axis=(2, 3), keepdims=True)
        cur = np.divide(cur, total, out=np.zeros_like(cur), where=total > 0)
    return cur


def coarse_kernels(mdp: DiscreteMdp, grid: CoarseGrid) -> list[np.ndarray]:
    retained = grid.indices - 1
    return [_bin_kernel(mdp, int(u), int(w)) for u, w in zip(retained[:-1], retained[1:])]


def gform_coarsened(mdp: DiscreteMdp, regime: TreatmentRegime, grid: CoarseGrid) -> float:
    """g-formula on the coarsened law: compose each bin's marginal kernel, then iterate on the grid."""
    regime.require_length(mdp.horizon)
    _check_boundary(regime, grid)
    _retained_mask(mdp, grid)
    k = regime.n_specified
    retained = grid.indices - 1
    kernels = coarse_kernels(mdp, grid)

    mu = np.zeros((2, mdp.n_states))
    mu[0] = mdp.initial
    for step, u in enumerate(retained):
        if u < k:
            total = mu.sum(axis=0)
            mu = np.zeros_like(mu)
            mu[regime.values[u]] = total
        else:
            jump = mu[0] * mdp.behavior[u]
            mu = np.stack([mu[0] - jump, mu[1] + jump])
        if step < len(kernels):
            mu = np.einsum("ai,aibj->bj", mu, kernels[step])
    return float(np.sum(mu * mdp.outcome))


def _policy_block(job: tuple) -> tuple[float, float]:
    mdp, kind, arg, retained, table, start, stop = job
    index = np.arange(start, stop, dtype=np.int64)
    bits = (index[:, None] >> np.arange(int(np.prod(table)), dtype=np.int64)[None, :]) & 1
    values = _coarse_values(mdp, kind, arg, retained, bits.reshape(-1, *table).astype(float))
    return float(values.min()), float(values.max())


def bias_bound(mdp: DiscreteMdp, regime: TreatmentRegime, grid: CoarseGrid,
               workers: int = 1) -> tuple[float, float]:
    """Range of g-formula minus policy value over deterministic policies at free times.

    Free times are non-retained times inside the regime's prefix. A policy
    maps L_t to a jump decision for untreated subjects; treatment stays
    absorbing. The coarsened g-formula is a mixture of these policies, so the
    realized discretization gap lies in the returned interval.

    With censoring the policy values use the bin-conditioned law and a
    decision may also depend on the state at the start of its bin; the
    conditioned coarsened g-formula mixes over that larger class.
    """
    _check_boundary(regime, grid)
    retained = _retained_mask(mdp, grid)
    kind, arg, n_free = _prefix_plan(mdp, regime, retained, free=True)
    exact = gform_uncoarsened(mdp, regime)
    if n_free == 0:
        value = float(_coarse_values(mdp, kind, arg, retained)[0])
        return exact - value, exact - value

    S = mdp.n_states
    table = (n_free, S) if mdp.censoring is None else (n_free, S, S)
    n_bits = int(np.prod(table))
    if n_bits > 62 or 2 ** n_bits > config.POLICY_GUARD:
        raise EnumerationGuardError(
            f"{n_free} free times x {S} states give 2^{n_bits} policies "
            f"(guard {config.POLICY_GUARD})"
        )
    total = 2 ** n_bits
    jobs = [(mdp, kind, arg, retained, table, start, min(start + BLOCK, total))
            for start in range(0, total, BLOCK)]
    blocks = map_ordered(_policy_block, jobs, workers=workers)
    lowest = min(block[0] for block in blocks)
    highest = max(block[1] for block in blocks)
    logger.debug("Enumerated %d policies over %d free times", total, n_free)
    return exact - highest, exact - lowest


def _bin_feature_law(mdp: DiscreteMdp, start: int, stop: int, origin: int,
                     interior: tuple[int, ...]) -> np.ndarray:
    """(S, F) law of the observed feature at ``stop`` under fixed interior actions."""
    cur = np.eye(mdp.n_states)
    actions = (origin,) + interior
    for offset, t in enumerate(range(start, stop)):
        cur = cur @ mdp.transition[t, actions[offset]]
    return cur @ mdp.feature_projection()


def check_conditions(mdp: DiscreteMdp, regime: TreatmentRegime, grid: CoarseGrid) -> ConditionReport:
    """Check the two sufficient conditions for zero discretization bias and compare the values."""
    regime.require_length(mdp.horizon)
    violations: list[str] = []
    retained = grid.indices - 1

    condition_i = True
    if regime.boundary is not None and not grid.retains(regime.boundary):
        condition_i = False
        violations.append(f"boundary {regime.boundary} not retained")
    jump = regime.jump_index
    if jump is not None and jump > 1 and not (grid.retains(jump) and grid.retains(jump - 1)):
        condition_i = False
        violations.append(f"jump at {jump} is not pinned by retained indices {jump - 1} and {jump}")

    condition_ii = True
    k = regime.n_specified
    for u, w in zip(retained[:-1], retained[1:]):
        width = int(w - u - 1)
        if width == 0 or w > k or regime.values[u] == 1:
            continue
        sequences = [tuple([0] * width)]
        sequences += [tuple([0] * i + [1] * (width - i)) for i in range(width)]
        laws = [_bin_feature_law(mdp, int(u), int(w), 0, seq) for seq in sequences]
        spread = max(float(np.max(np.abs(law - laws[0]))) for law in laws)
        if spread > TOL:
            condition_ii = False
            violations.append(f"treatment inside bin ({u + 1}, {w + 1}) shifts L_{w + 1} by {spread:.3g}")

    uncoarsened = gform_uncoarsened(mdp, regime)
    try:
        coarsened = gform_coarsened(mdp, regime, grid)
    except BoundaryNotRetainedError:
        coarsened = float("nan")
    discrepancy = uncoarsened - coarsened
    values_agree = bool(abs(discrepancy) <= AGREE_TOL) if np.isfinite(discrepancy) else None
    if condition_i and condition_ii and values_agree is False:
        logger.warning("Both conditions hold but the g-formulas differ by %.3g", discrepancy)
        violations.append("values differ although both conditions hold")
    return ConditionReport(
        condition_i=condition_i, condition_ii=condition_ii, uncoarsened=uncoarsened,
        coarsened=coarsened, discrepancy=discrepancy, values_agree=values_agree,
        violations=violations,
    )


# Builders

def random_mdp(seed: int, horizon: int, n_states: int = 2, treatment_effect: bool = True,
               censoring: bool = False) -> DiscreteMdp:
    """Dirichlet transitions, behavior in (0.1, 0.9) and outcomes in [0, 1]."""
    rng = np.random.default_rng(seed)
    S = n_states
    transition = rng.dirichlet(np.ones(S), size=(max(horizon - 1, 0), 2, S))
    outcome = rng.random((2, S))
    if not treatment_effect:
        transition[:, 1] = transition[:, 0]
        outcome[1] = outcome[0]
    return DiscreteMdp(
        horizon=horizon,
        labels=tuple(f"s{i}" for i in range(S)),
        initial=rng.dirichlet(np.ones(S)),
        transition=transition.reshape(max(horizon - 1, 0), 2, S, S),
        behavior=rng.uniform(0.1, 0.9, size=(horizon, S)),
        outcome=outcome,
        censoring=rng.uniform(0.02, 0.2, size=(horizon, S)) if censoring else None,
    )


def delayed_effect_mdp(horizon: int, omega: int, effect: float = -0.25,
                       behavior: tuple[float, float] = (0.15, 0.35)) -> DiscreteMdp:
    """Binary feature x whose dynamics change only after ``omega`` treated steps.

    The state is (x, c) with c = consecutive treated steps, capped at
    ``omega``; c resets when treatment is 0. Only x is an observed feature.
    """
    if omega < 1:
        raise MalformedMdpError("effect delay must be >= 1")
    states = [(x, c) for x in (0, 1) for c in range(omega + 1)]
    S = len(states)
    stay_high = (0.3, 0.7)

    def step(x: int, c: int, a: int) -> np.ndarray:
        c_next = min(c + 1, omega) if a == 1 else 0
        p_high = float(np.clip(stay_high[x] + (effect if c_next >= omega else 0.0), 0.0, 1.0))
        row = np.zeros(S)
        row[states.index((1, c_next))] += p_high
        row[states.index((0, c_next))] += 1.0 - p_high
        return row

    kernel = np.array([[step(x, c, a) for x, c in states] for a in (0, 1)])
    outcome = np.array([[x + (0.5 * effect if (min(c + 1, omega) if a else 0) >= omega else 0.0)
                         for x, c in states] for a in (0, 1)])
    initial = np.zeros(S)
    initial[states.index((0, 0))] = 0.5
    initial[states.index((1, 0))] = 0.5
    return DiscreteMdp(
        horizon=horizon,
        labels=tuple(f"x{x}c{c}" for x, c in states),
        initial=initial,
        transition=np.broadcast_to(kernel, (max(horizon - 1, 0), 2, S, S)).copy(),
        behavior=np.tile([behavior[x] for x, _ in states], (horizon, 1)),
        outcome=outcome,
        features=tuple(f"x{x}" for x, _ in states),
    )


def with_discharge(mdp: DiscreteMdp, rate: float, label: str = "gone",
                   value: float = 0.0) -> DiscreteMdp:
    """Add an absorbing death/discharge state entered with probability ``rate`` per step."""
    S = mdp.n_states
    T = mdp.horizon
    transition = np.zeros((max(T - 1, 0), 2, S + 1, S + 1))
    transition[:, :, :S, :S] = mdp.transition * (1.0 - rate)
    transition[:, :, :S, S] = rate
    transition[:, :, S, S] = 1.0
    behavior = np.hstack([mdp.behavior, np.zeros((T, 1))])
    censoring = None if mdp.censoring is None else np.hstack([mdp.censoring, np.zeros((T, 1))])
    return DiscreteMdp(
        horizon=T,
        labels=mdp.labels + (label,),
        initial=np.append(mdp.initial, 0.0),
        transition=transition,
        behavior=behavior,
        outcome=np.hstack([mdp.outcome, [[value], [value]]]),
        censoring=censoring,
        discharge=S,
        features=mdp.features + (label,),
    )


# Panels from an MDP

def _paths(mdp: DiscreteMdp):
    """Every (states, treatments, censoring time, probability) with positive probability."""
    T = mdp.horizon
    out = []

    def visit(t: int, states: list[int], treatments: list[int], prob: float, a_prev: int) -> None:
        l = states[-1]
        if mdp.censoring is not None:
            h = mdp.censoring[t, l]
            if h > 0:
                out.append((states, treatments + [a_prev], t, prob * h))
            prob *= 1.0 - h
            if prob <= 0:
                return
        options = [(1, 1.0)] if a_prev == 1 else [(1, mdp.behavior[t, l]), (0, 1.0 - mdp.behavior[t, l])]
        for a, pa in options:
            if pa <= 0:
                continue
            if t == T - 1:
                out.append((states, treatments + [a], None, prob * pa))
                continue
            for j in np.flatnonzero(mdp.transition[t, a, l] > 0):
                visit(t + 1, states + [int(j)], treatments + [a], prob * pa * mdp.transition[t, a, l, j], a)

    for l in np.flatnonzero(mdp.initial > 0):
        visit(0, [int(l)], [], float(mdp.initial[l]), 0)
    return out


def _panel_from_rows(mdp: DiscreteMdp, states: np.ndarray, a: np.ndarray,
                     censor_at: np.ndarray, weights: Optional[np.ndarray]) -> Panel:
    """Assemble a panel; ``censor_at`` is the 0-based censoring time or -1."""
    n, T = a.shape
    times = np.arange(T)[None, :]
    censored = censor_at >= 0
    c = (censored[:, None] & (times >= censor_at[:, None])).astype(np.int8)
    l = states.astype(float)
    l[censored[:, None] & (times > censor_at[:, None])] = np.nan
    final = np.clip(states[:, -1], 0, None)
    y = mdp.outcome[a[:, -1], final]
    y[censored] = np.nan
    d = None
    if mdp.discharge is not None:
        d = (states == mdp.discharge).astype(np.int8)
    return Panel(v=np.zeros((n, 0)), l=l[:, :, None], a=a, y=y,
                 c=c if mdp.censoring is not None else None, d=d, weights=weights)


def population_panel(mdp: DiscreteMdp) -> Panel:
    """The exact observed law as a panel: one row per path, weighted by its probability."""
    paths = _paths(mdp)
    T = mdp.horizon
    n = len(paths)
    states = np.full((n, T), -1, dtype=int)
    a = np.zeros((n, T), dtype=np.int8)
    censor_at = np.full(n, -1)
    weights = np.empty(n)
    for i, (path_states, treatments, censored, prob) in enumerate(paths):
        states[i, :len(path_states)] = path_states
        a[i, :len(treatments)] = treatments
        a[i, len(treatments):] = treatments[-1]
        if censored is not None:
            censor_at[i] = censored
        weights[i] = prob
    logger.debug("Population panel: %d paths", n)
    return _panel_from_rows(mdp, states, a, censor_at, weights)


def _draw(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.minimum((u[:, None] > cdf).sum(axis=1), cdf.shape[1] - 1)


def sample_mdp_panel(mdp: DiscreteMdp, n: int, seed: int,
                     regime: Optional[TreatmentRegime] = None) -> Panel:
    """Monte Carlo panel; with a regime, treatment is set on its prefix and censoring is off."""
    T, S = mdp.horizon, mdp.n_states
    k = 0
    if regime is not None:
        regime.require_length(T)
        k = regime.n_specified
    u = np.empty((n, T, 3))
    for i in range(n):
        u[i] = substream(seed, i).random((T, 3))

    states = np.full((n, T), -1, dtype=int)
    a = np.zeros((n, T), dtype=np.int8)
    censor_at = np.full(n, -1)
    alive = np.ones(n, dtype=bool)
    states[:, 0] = _draw(np.broadcast_to(np.cumsum(mdp.initial), (n, S)), u[:, 0, 0])
    a_prev = np.zeros(n, dtype=np.int8)
    for t in range(T):
        l = states[:, t]
        if mdp.censoring is not None and regime is None:
            newly = alive & (u[:, t, 1] < mdp.censoring[t, np.clip(l, 0, None)])
            censor_at[newly] = t
            alive &= ~newly
        if t < k:
            a_t = np.full(n, regime.values[t], dtype=np.int8)
        else:
            jump = u[:, t, 2] < mdp.behavior[t, np.clip(l, 0, None)]
            a_t = ((a_prev == 1) | jump).astype(np.int8)
        a_t[~alive] = a_prev[~alive]
        a[:, t] = a_t
        if t < T - 1:
            rows = mdp.transition[t, a_t, np.clip(l, 0, None)]
            nxt = _draw(np.cumsum(rows, axis=1), u[:, t + 1, 0])
            states[:, t + 1] = np.where(alive, nxt, -1)
        a_prev = a_t
    return _panel_from_rows(mdp, states, a, censor_at, None)


# Text format

_LINE = re.compile(r"^(?P<head>[^:]+?)\s*(?::\s*(?P<body>.*))?$")


def _times(token: str, count: int) -> list[int]:
    if token == "*":
        return list(range(count))
    t = int(token)
    if not 1 <= t <= count:
        raise MalformedMdpError(f"time {t} outside 1..{count}")
    return [t - 1]


def parse_mdp(text: str) -> DiscreteMdp:
    """Parse the plain-text MDP description.

    Grammar (one directive per line, ``#`` starts a comment, later lines
    override earlier ones)::

        horizon <T>
        states <label> ...
        initial : <p> ...
        transition <t|*> <a> <from> : <p> ...      # L_t -> L_{t+1}, t = 1..T-1
        behavior <t|*> <state> : <p>               # P(A_t = 1 | A_{t-1} = 0, L_t)
        outcome <a> <state> : <value>              # E[Y | A_T, L_T]
        censoring <t|*> <state> : <p>              # optional
        discharge <state>                          # optional absorbing state
        observe <state> : <feature>                # optional feature label
    """
    horizon: Optional[int] = None
    labels: list[str] = []
    pending: list[tuple[int, list[str], list[float]]] = []
    discharge: Optional[str] = None
    observe: dict[str, str] = {}
    initial = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        match = _LINE.match(line)
        if match is None:
            raise MalformedMdpError(f"line {lineno}: cannot parse {raw.strip()!r}")
        head = match.group("head").split()
        body = match.group("body")
        keyword = head[0].lower()
        try:
            if keyword == "horizon":
                horizon = int(head[1])
            elif keyword == "states":
                labels = head[1:]
            elif keyword == "discharge":
                discharge = head[1]
            elif keyword == "observe":
                observe[head[1]] = (body or "").strip()
            elif keyword == "initial":
                initial = [float(x) for x in (body or "").split()]
            elif keyword in ("transition", "behavior", "outcome", "censoring"):
                pending.append((lineno, head, [float(x) for x in (body or "").split()]))
            else:
                raise MalformedMdpError(f"unknown directive {keyword!r}")
        except (IndexError, ValueError) as e:
            raise MalformedMdpError(f"line {lineno}: {raw.strip()!r}: {e}") from e

    if horizon is None or not labels or initial is None:
        raise MalformedMdpError("horizon, states and initial are required")
    T, S = horizon, len(labels)
    index = {label: i for i, label in enumerate(labels)}
    transition = np.full((max(T - 1, 0), 2, S, S), np.nan)
    behavior = np.full((T, S), np.nan)
    outcome = np.full((2, S), np.nan)
    censoring = None

    for lineno, head, values in pending:
        keyword = head[0].lower()
        try:
            if keyword == "transition":
                _, t, a, origin = head
                if len(values) != S:
                    raise MalformedMdpError(f"expected {S} probabilities")
                for step in _times(t, T - 1):
                    transition[step, int(a), index[origin]] = values
            elif keyword == "outcome":
                _, a, state = head
                outcome[int(a), index[state]] = values[0]
            else:
                _, t, state = head
                if keyword == "censoring" and censoring is None:
                    censoring = np.full((T, S), np.nan)
                table = behavior if keyword == "behavior" else censoring
                for step in _times(t, T):
                    table[step, index[state]] = values[0]
        except (KeyError, ValueError, IndexError, MalformedMdpError) as e:
            raise MalformedMdpError(f"line {lineno}: {' '.join(head)}: {e}") from e

    for name, table in (("transition", transition), ("behavior", behavior), ("outcome", outcome),
                        ("censoring", censoring)):
        if table is not None and np.isnan(table).any():
            raise MalformedMdpError(f"{name} table is incomplete")
    features = tuple(observe.get(label, label) for label in labels) if observe else None
    return DiscreteMdp(
        horizon=T, labels=tuple(labels), initial=np.asarray(initial), transition=transition,
        behavior=behavior, outcome=outcome, censoring=censoring,
        discharge=None if discharge is None else index.get(discharge, -1), features=features,
    )


def _numbers(values: np.ndarray) -> str:
    return " ".join(repr(float(x)) for x in np.atleast_1d(values))


def format_mdp(mdp: DiscreteMdp) -> str:
    """Text form accepted by ``parse_mdp``; time-constant tables use ``*``."""
    T = mdp.horizon
    lines = [f"horizon {T}", "states " + " ".join(mdp.labels), "initial : " + _numbers(mdp.initial)]

    def per_time(table: np.ndarray) -> list[tuple[str, int]]:
        if len(table) and np.all(table == table[0]):
            return [("*", 0)]
        return [(str(t + 1), t) for t in range(len(table))]

    for token, t in per_time(mdp.transition):
        for a, (i, label) in itertools.product((0, 1), enumerate(mdp.labels)):
            lines.append(f"transition {token} {a} {label} : {_numbers(mdp.transition[t, a, i])}")
    for token, t in per_time(mdp.behavior):
        for i, label in enumerate(mdp.labels):
            lines.append(f"behavior {token} {label} : {_numbers(mdp.behavior[t, i])}")
    for a, (i, label) in itertools.product((0, 1), enumerate(mdp.labels)):
        lines.append(f"outcome {a} {label} : {_numbers(mdp.outcome[a, i])}")
    if mdp.censoring is not None:
        for token, t in per_time(mdp.censoring):
            for i, label in enumerate(mdp.labels):
                lines.append(f"censoring {token} {label} : {_numbers(mdp.censoring[t, i])}")
    if mdp.discharge is not None:
        lines.append(f"discharge {mdp.labels[mdp.discharge]}")
    if mdp.features != mdp.labels:
        lines += [f"observe {label} : {feature}" for label, feature in zip(mdp.labels, mdp.features)]
    return "\n".join(lines) + "\n"


def exact_grid(mdp: DiscreteMdp, delta: int) -> CoarseGrid:
    return coarse_indices(mdp.horizon, delta)
