"""Synthetic longitudinal data from the linear-Gaussian functional causal model.

Per time step (features first, then censoring, then treatment)::

    L_t = b0 + Bv V + Bl L_{t-1} + bA A_{t-omega} + eps_t
    C_t ~ Bern(expit(censoring hazard on V, L_t))
    A_t | A_{t-1} = 0 ~ Bern(expit(g0 + gV V + gL L_t))
    Y   = b0[3] + Bv[3] V + Bl[3] L_T + bA[3] A_{T+1-omega} + eps_Y

with ``L_0 = A_0 = 0``. An optional discharge hazard, drawn after A_t,
freezes the subject and fixes Y at the next step of the third feature.

Subject ``i`` always draws from substream ``i`` of the panel seed in the
order V (2), feature noise (T x 3), outcome noise, then uniforms for
treatment, censoring and discharge (3 x T). Every draw is made whether or
not it is used, so observational and intervened panels with the same seed
share their noise.
"""

import logging
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit, logit

from app.errors import ConfigError
from app.models import N_BASELINE, N_FEATURES, DgpParams, HazardParams
from app.services.panel import Panel
from app.services.regimes import TreatmentRegime
from app.utils import kvfile
from app.utils.rng import substream

logger = logging.getLogger(__name__)

GAMMA_INTERCEPT = -5.5
GAMMA_L3 = 0.5
BETA_31 = 0.006
FREE_SD = 0.005
N_FREE = 22
RCT_NEVER_FRACTION = 0.25
TRUTH_CHUNK = 10_000
MIN_TRUTH_SAMPLES = 1000


def sample_params(seed: int, t_star: int = 257, noise_sd: float = 0.05) -> DgpParams:
    """Fixed structural constants plus 22 free coefficients drawn from N(0, 0.005^2)."""
    z = np.random.default_rng(seed).normal(0.0, FREE_SD, N_FREE)
    return DgpParams(
        beta_intercept=[z[0], z[7], BETA_31],
        beta_v=[[z[1], z[2]], [z[8], z[9]], [z[14], z[15]]],
        beta_lag=[[z[3], z[4], z[5]], [z[10], z[11], z[12]], [z[16], z[17], 1.0]],
        beta_treat=[z[6], z[13], -BETA_31],
        gamma_intercept=GAMMA_INTERCEPT,
        gamma_v=[z[18], z[19]],
        gamma_l=[z[20], z[21], GAMMA_L3],
        t_star=t_star,
        noise_sd=noise_sd,
    )


def with_effect_delay(params: DgpParams, omega: int) -> DgpParams:
    if omega < 1:
        raise ConfigError(f"effect delay must be >= 1, got {omega}")
    return params.model_copy(update={"omega": omega})


def as_rct(params: DgpParams) -> DgpParams:
    """Drop the V and L dependence of treatment; the intercept keeps a quarter never treated."""
    per_step = 1.0 - RCT_NEVER_FRACTION ** (1.0 / params.t_star)
    return params.model_copy(update={
        "confounded": False,
        "gamma_intercept": float(logit(per_step)),
        "gamma_v": [0.0] * N_BASELINE,
        "gamma_l": [0.0] * N_FEATURES,
    })


def without_treatment_effect(params: DgpParams) -> DgpParams:
    beta_treat = [0.0] * N_FEATURES
    return params.model_copy(update={"beta_treat": beta_treat})


def with_hazards(
    params: DgpParams,
    censor_rate: Optional[float] = None,
    discharge_rate: Optional[float] = None,
) -> DgpParams:
    """Attach per-step censoring / discharge hazards.

    Censoring depends on the third feature with the same coefficient as
    treatment so that it is informative; discharge has a constant rate.
    """
    update: dict = {}
    if censor_rate is not None:
        update["censoring_hazard"] = HazardParams(
            intercept=float(logit(censor_rate)), l=[0.0, 0.0, params.gamma_l[2]]
        )
    if discharge_rate is not None:
        update["discharge_hazard"] = HazardParams(intercept=float(logit(discharge_rate)))
    return params.model_copy(update=update)


class _Tables:
    """Coefficient arrays unpacked once per simulation."""

    def __init__(self, params: DgpParams):
        self.b0 = np.asarray(params.beta_intercept)
        self.bv = np.asarray(params.beta_v)
        self.bl = np.asarray(params.beta_lag)
        self.ba = np.asarray(params.beta_treat)
        self.g0 = params.gamma_intercept
        self.gv = np.asarray(params.gamma_v)
        self.gl = np.asarray(params.gamma_l)
        self.sd = params.noise_sd
        self.omega = params.omega


def _hazard(h: HazardParams, v: np.ndarray, l_t: np.ndarray) -> np.ndarray:
    return expit(h.intercept + v @ np.asarray(h.v) + l_t @ np.asarray(h.l))


def _draws(t_star: int, n: int, seed: int, first: int):
    v = np.empty((n, N_BASELINE))
    eps = np.empty((n, t_star, N_FEATURES))
    eps_y = np.empty(n)
    uniforms = np.empty((n, 3, t_star))
    for i in range(n):
        rng = substream(seed, first + i)
        v[i] = rng.standard_normal(N_BASELINE)
        eps[i] = rng.standard_normal((t_star, N_FEATURES))
        eps_y[i] = rng.standard_normal()
        uniforms[i] = rng.random((3, t_star))
    return v, eps, eps_y, uniforms


def _simulate(
    params: DgpParams,
    n: int,
    seed: int,
    regime: Optional[TreatmentRegime] = None,
    first: int = 0,
) -> Panel:
    if n < 1:
        raise ConfigError(f"need at least one subject, got {n}")
    T = params.t_star
    tab = _Tables(params)
    v, eps, eps_y, uniforms = _draws(T, n, seed, first)
    u_treat, u_cens, u_disc = uniforms[:, 0], uniforms[:, 1], uniforms[:, 2]

    censoring = params.censoring_hazard if regime is None else None
    discharge = params.discharge_hazard
    n_specified = 0 if regime is None else regime.n_specified

    l = np.empty((n, T, N_FEATURES))
    a = np.zeros((n, T), dtype=np.int8)
    c = np.zeros((n, T), dtype=np.int8)
    d = np.zeros((n, T), dtype=np.int8)
    y = np.full(n, np.nan)

    base = tab.b0 + v @ tab.bv.T
    l_prev = np.zeros((n, N_FEATURES))
    a_prev = np.zeros(n, dtype=np.int8)
    censored = np.zeros(n, dtype=bool)
    gone = np.zeros(n, dtype=bool)

    def lagged_treatment(step: int) -> np.ndarray:
        return a[:, step].astype(float) if step >= 0 else np.zeros(n)

    for t in range(T):
        l_t = base + l_prev @ tab.bl.T + np.outer(lagged_treatment(t - tab.omega), tab.ba)
        l_t += tab.sd * eps[:, t]
        l_t[gone] = l_prev[gone]
        l[:, t] = l_t
        d[:, t] = gone

        if censoring is not None:
            new = ~censored & ~gone & (u_cens[:, t] < _hazard(censoring, v, l_t))
            censored |= new
        c[:, t] = censored

        if t < n_specified:
            a_t = np.full(n, regime.values[t], dtype=np.int8)
        else:
            p = expit(tab.g0 + v @ tab.gv + l_t @ tab.gl)
            a_t = ((a_prev == 1) | (u_treat[:, t] < p)).astype(np.int8)
        frozen = gone | censored
        a_t[frozen] = a_prev[frozen]
        a[:, t] = a_t

        if discharge is not None and t < T - 1:
            leaving = ~gone & ~censored & (u_disc[:, t] < _hazard(discharge, v, l_t))
            if leaving.any():
                y[leaving] = (base[leaving, 2] + l_t[leaving] @ tab.bl[2]
                              + tab.ba[2] * lagged_treatment(t + 1 - tab.omega)[leaving]
                              + tab.sd * eps_y[leaving])
                gone |= leaving

        l_prev = l_t
        a_prev = a_t

    stay = ~gone
    y[stay] = (base[stay, 2] + l_prev[stay] @ tab.bl[2]
               + tab.ba[2] * lagged_treatment(T - tab.omega)[stay] + tab.sd * eps_y[stay])

    if censoring is not None:
        y[censored] = np.nan
        # features after the censoring step are unobserved
        after = np.cumsum(c, axis=1) > 1
        l[after] = np.nan

    return Panel(
        v=v, l=l, a=a, y=y, delta=1,
        c=c if censoring is not None else None,
        d=d if discharge is not None else None,
    )


def generate_panel(params: DgpParams, n: int, seed: int) -> Panel:
    """Observational panel at the finest grid."""
    panel = _simulate(params, n, seed)
    logger.debug("Generated panel n=%d t=%d never-treated=%.3f", n, panel.t,
                 float((panel.a[:, -1] == 0).mean()))
    return panel


def generate_intervened(
    params: DgpParams, regime: TreatmentRegime, n: int, seed: int, first: int = 0
) -> Panel:
    """Panel under do(A = regime) with censoring switched off.

    After the regime's specified prefix treatment follows its natural course.
    ``first`` offsets the subject substreams so chunks of one large sample
    line up with a single call.
    """
    regime.require_length(params.t_star)
    return _simulate(params, n, seed, regime=regime, first=first)


def truth_mc(
    params: DgpParams, regime: TreatmentRegime, m: int, seed: int
) -> tuple[float, float]:
    """Monte Carlo mean of Y under the regime with its standard error."""
    if m < MIN_TRUTH_SAMPLES:
        raise ConfigError(f"truth oracle needs m >= {MIN_TRUTH_SAMPLES}, got {m}")
    total = 0.0
    total_sq = 0.0
    for first in range(0, m, TRUTH_CHUNK):
        size = min(TRUTH_CHUNK, m - first)
        y = generate_intervened(params, regime, size, seed, first=first).y
        total += float(y.sum())
        total_sq += float(np.square(y).sum())
    psi = total / m
    variance = max(total_sq - m * psi * psi, 0.0) / (m - 1)
    mc_se = float(np.sqrt(variance / m))
    logger.info("Truth for %s: %.6f (mc_se %.2g, m=%d)", regime, psi, mc_se, m)
    return psi, mc_se


def _hazard_kv(prefix: str, hazard: Optional[HazardParams]) -> dict:
    if hazard is None:
        return {}
    return {f"{prefix}_intercept": hazard.intercept, f"{prefix}_v": hazard.v, f"{prefix}_l": hazard.l}


def params_to_kv(params: DgpParams) -> str:
    values = params.model_dump(exclude={"censoring_hazard", "discharge_hazard"})
    values.update(_hazard_kv("censoring", params.censoring_hazard))
    values.update(_hazard_kv("discharge", params.discharge_hazard))
    return kvfile.format_kv(values, header="DgpParams; matrix rows are ';' separated")


def params_from_kv(text: str) -> DgpParams:
    raw = kvfile.parse_kv(text)
    try:
        fields: dict = {
            "beta_intercept": kvfile.to_floats(raw.pop("beta_intercept")),
            "beta_v": kvfile.to_matrix(raw.pop("beta_v")),
            "beta_lag": kvfile.to_matrix(raw.pop("beta_lag")),
            "beta_treat": kvfile.to_floats(raw.pop("beta_treat")),
            "gamma_intercept": float(raw.pop("gamma_intercept")),
            "gamma_v": kvfile.to_floats(raw.pop("gamma_v")),
            "gamma_l": kvfile.to_floats(raw.pop("gamma_l")),
        }
    except KeyError as e:
        raise ConfigError(f"missing parameter {e.args[0]!r}") from e
    except ValueError as e:
        raise ConfigError(str(e)) from e
    for key in ("omega", "t_star"):
        if key in raw:
            fields[key] = int(raw.pop(key))
    if "noise_sd" in raw:
        fields["noise_sd"] = float(raw.pop("noise_sd"))
    if "confounded" in raw:
        fields["confounded"] = kvfile.to_bool(raw.pop("confounded"))
    for prefix in ("censoring", "discharge"):
        if f"{prefix}_intercept" in raw:
            fields[f"{prefix}_hazard"] = HazardParams(
                intercept=float(raw.pop(f"{prefix}_intercept")),
                v=kvfile.to_floats(raw.pop(f"{prefix}_v", "0,0")),
                l=kvfile.to_floats(raw.pop(f"{prefix}_l", "0,0,0")),
            )
    if raw:
        raise ConfigError(f"unknown parameter keys: {', '.join(sorted(raw))}")
    try:
        return DgpParams(**fields)
    except ValueError as e:
        raise ConfigError(f"invalid parameters: {e}") from e


def load_params(path: str | Path) -> DgpParams:
    return params_from_kv(Path(path).read_text())


def save_params(params: DgpParams, path: str | Path) -> None:
    Path(path).write_text(params_to_kv(params))
