"""Pydantic models for the discretization bias lab."""

import math
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.config import config

N_BASELINE = 2
N_FEATURES = 3

DEFAULT_DELTAS = [1, 2, 4, 8, 16, 32, 64, 128, 256]


class HazardParams(BaseModel):
    """Per-step logistic hazard on (V, L_t)."""
    model_config = ConfigDict(frozen=True)

    intercept: float
    v: list[float] = Field(default_factory=lambda: [0.0] * N_BASELINE)
    l: list[float] = Field(default_factory=lambda: [0.0] * N_FEATURES)

    @model_validator(mode="after")
    def _check_shapes(self) -> "HazardParams":
        if len(self.v) != N_BASELINE or len(self.l) != N_FEATURES:
            raise ValueError(f"hazard needs {N_BASELINE} V and {N_FEATURES} L coefficients")
        return self


class DgpParams(BaseModel):
    """Coefficients of the synthetic functional causal model.

    Row d of the beta tables belongs to feature L_{t,d}. The treatment
    coefficient is stored explicitly; the shipped parameters use -beta_{3,1}
    for the third feature and a unit lag-3 coefficient, as the structural
    equations prescribe. The outcome reuses row 3 one step past the horizon.
    """
    model_config = ConfigDict(frozen=True)

    beta_intercept: list[float]
    beta_v: list[list[float]]
    beta_lag: list[list[float]]
    beta_treat: list[float]
    gamma_intercept: float
    gamma_v: list[float]
    gamma_l: list[float]
    omega: int = Field(1, ge=1)
    noise_sd: float = Field(0.05, gt=0)
    t_star: int = Field(257, ge=2)
    confounded: bool = True
    censoring_hazard: Optional[HazardParams] = None
    discharge_hazard: Optional[HazardParams] = None

    @model_validator(mode="after")
    def _check_tables(self) -> "DgpParams":
        if len(self.beta_intercept) != N_FEATURES or len(self.beta_treat) != N_FEATURES:
            raise ValueError("beta_intercept and beta_treat need one entry per feature")
        if len(self.beta_v) != N_FEATURES or any(len(row) != N_BASELINE for row in self.beta_v):
            raise ValueError("beta_v must be 3 x 2")
        if len(self.beta_lag) != N_FEATURES or any(len(row) != N_FEATURES for row in self.beta_lag):
            raise ValueError("beta_lag must be 3 x 3")
        if len(self.gamma_v) != N_BASELINE or len(self.gamma_l) != N_FEATURES:
            raise ValueError("gamma_v must have 2 and gamma_l 3 entries")
        if not self.confounded and (any(self.gamma_v) or any(self.gamma_l)):
            raise ValueError("unconfounded parameters must have zero gamma_v and gamma_l")
        return self


class EstimateDiagnostics(BaseModel):
    """Weight and fit diagnostics reported with every estimate."""
    weight_min: Optional[float] = None
    weight_max: Optional[float] = None
    ess: Optional[float] = None
    fallback_fits: int = 0
    degenerate_steps: int = 0
    rank_deficient_fits: int = 0
    max_abs_fluctuation: Optional[float] = None


class Estimate(BaseModel):
    """Point estimate of E[Y^a] for one regime."""
    method: str
    psi_hat: Optional[float]
    n_followers: int = Field(..., ge=0)
    undefined: bool = False
    diagnostics: EstimateDiagnostics = Field(default_factory=EstimateDiagnostics)

    @property
    def flags(self) -> list[str]:
        flags = []
        if self.undefined:
            flags.append("undefined")
        if self.diagnostics.fallback_fits:
            flags.append(f"fallback={self.diagnostics.fallback_fits}")
        if self.diagnostics.degenerate_steps:
            flags.append(f"degenerate={self.diagnostics.degenerate_steps}")
        return flags


class EstimatorSpec(BaseModel):
    """An estimator with its variance-reduction options.

    The text form ``method[+clip=<alpha>][+pool_time][+pool_regimes]`` is
    used in config files, on the command line and as report labels.
    """
    model_config = ConfigDict(frozen=True)

    method: Literal["ipw", "ir", "tmle", "naive"]
    clip_alpha: Optional[float] = Field(None, ge=0.0, lt=50.0)
    pool_time: bool = False
    pool_regimes: bool = False

    @property
    def label(self) -> str:
        parts = [self.method]
        if self.clip_alpha is not None:
            parts.append(f"clip={self.clip_alpha:g}")
        if self.pool_time:
            parts.append("pool_time")
        if self.pool_regimes:
            parts.append("pool_regimes")
        return "+".join(parts)

    @property
    def variant(self) -> str:
        if self.clip_alpha is not None:
            return "clip"
        if self.pool_time:
            return "pool_time"
        if self.pool_regimes:
            return "pool_regimes"
        return "baseline"

    @property
    def needs_propensity(self) -> bool:
        return self.method in ("ipw", "tmle")

    @classmethod
    def parse(cls, text: str) -> "EstimatorSpec":
        method, *options = [part.strip() for part in text.strip().split("+")]
        fields: dict = {"method": method}
        for option in options:
            if option.startswith("clip="):
                fields["clip_alpha"] = float(option.split("=", 1)[1])
            elif option in ("pool_time", "pool_regimes"):
                fields[option] = True
            else:
                raise ValueError(f"unknown estimator option {option!r}")
        return cls(**fields)


def default_estimators() -> list[EstimatorSpec]:
    return [EstimatorSpec(method="ipw"), EstimatorSpec(method="ir"), EstimatorSpec(method="tmle")]


class SweepConfig(BaseModel):
    """Settings shared by the sweep, effect-delay, RCT and variance-reduction runs."""
    model_config = ConfigDict(extra="forbid")

    dgp_seed: int = config.DGP_SEED
    root_seed: int = config.ROOT_SEED
    n: int = Field(config.SUBJECTS, ge=1)
    replications: int = Field(config.REPLICATIONS, ge=2)
    t_star: int = Field(config.T_STAR, ge=2)
    noise_sd: float = Field(0.05, gt=0)
    deltas: list[int] = Field(default_factory=lambda: list(DEFAULT_DELTAS))
    omegas: list[int] = Field(default_factory=lambda: [1])
    estimators: list[EstimatorSpec] = Field(default_factory=default_estimators)
    alphas: list[float] = Field(default_factory=lambda: [0.1, 1.0, 2.5])
    regime: str = "never"
    truth_m: int = Field(config.TRUTH_SAMPLES, ge=1000)
    workers: int = Field(config.WORKERS, ge=1)
    output: Optional[str] = None

    @field_validator("estimators", mode="before")
    @classmethod
    def _parse_estimators(cls, value: object) -> object:
        if isinstance(value, str):
            value = [item for item in value.split(",") if item.strip()]
        if isinstance(value, list):
            return [EstimatorSpec.parse(item) if isinstance(item, str) else item for item in value]
        return value

    @field_validator("omegas")
    @classmethod
    def _check_omegas(cls, value: list[int]) -> list[int]:
        if any(omega < 1 for omega in value):
            raise ValueError("effect delays must be >= 1")
        return value

    @field_validator("alphas")
    @classmethod
    def _check_alphas(cls, value: list[float]) -> list[float]:
        if any(not 0.0 <= alpha < 50.0 for alpha in value):
            raise ValueError("clipping percentiles must lie in [0, 50)")
        return value

    @model_validator(mode="after")
    def _check_deltas(self) -> "SweepConfig":
        if not self.deltas:
            raise ValueError("at least one bin width is required")
        bad = [delta for delta in self.deltas if not 1 <= delta <= max(self.t_star - 1, 1)]
        if bad:
            raise ValueError(f"bin widths {bad} are not valid for t_star={self.t_star}")
        return self


class ReportRow(BaseModel):
    """Monte Carlo summary for one (estimator, bin width, effect delay) cell."""
    experiment: str
    estimator: str
    method: str
    variant: str
    alpha: Optional[float] = None
    delta: int
    omega: int
    t_len: int
    truth: float
    truth_se: float
    n_reps: int
    n_failed: int
    mean_estimate: Optional[float]
    bias: Optional[float]
    abs_bias: Optional[float]
    variance: Optional[float]
    mse: Optional[float]
    mc_se_of_bias: Optional[float]
    mean_ess: Optional[float] = None
    fallback_rate: float = 0.0


class ReplicateRecord(BaseModel):
    """One estimator run inside one replicate."""
    estimator: str
    delta: int
    omega: int
    replicate: int
    psi_hat: Optional[float]
    n_followers: int
    ess: Optional[float] = None
    fallback_fits: int = 0
    degenerate_steps: int = 0


class ExperimentReport(BaseModel):
    """Rows plus the raw replicate estimates they were computed from."""
    experiment: str
    rows: list[ReportRow]
    replicates: list[ReplicateRecord] = Field(default_factory=list)
    grids: dict[int, list[int]] = Field(default_factory=dict)
    truths: dict[int, tuple[float, float]] = Field(default_factory=dict)
    root_seed: int = 0

    def row(self, estimator: str, delta: int, omega: int = 1) -> ReportRow:
        for candidate in self.rows:
            if (candidate.estimator, candidate.delta, candidate.omega) == (estimator, delta, omega):
                return candidate
        raise KeyError((estimator, delta, omega))

    def estimates(self, estimator: str, delta: int, omega: int = 1) -> list[float]:
        return [
            record.psi_hat
            for record in self.replicates
            if (record.estimator, record.delta, record.omega) == (estimator, delta, omega)
            and record.psi_hat is not None
            and math.isfinite(record.psi_hat)
        ]


class ConditionReport(BaseModel):
    """Zero-bias conditions for one (MDP, regime, grid) triple."""
    condition_i: bool
    condition_ii: bool
    uncoarsened: float
    coarsened: float
    discrepancy: float
    values_agree: Optional[bool] = None
    violations: list[str] = Field(default_factory=list)


class HealthResponse(BaseModel):
    """Health check response."""
    status: str
    time: str
    version: str


class EstimateResponse(BaseModel):
    """Response model for a panel estimate."""
    estimate: Estimate
    ci_lo: Optional[float] = None
    ci_hi: Optional[float] = None
    bootstrap_skipped: int = 0
    delta: int
    grid: list[int]


class ExactRequest(BaseModel):
    """Request model for exact g-computation on an MDP description."""
    mdp: str = Field(..., min_length=1)
    regime: str = "never"
    delta: int = Field(1, ge=1)
    action: Literal["value", "coarsened", "policy", "bound", "check"] = "value"


class ExactResponse(BaseModel):
    """Response model for exact g-computation."""
    action: str
    grid: list[int]
    value: Optional[float] = None
    lo: Optional[float] = None
    hi: Optional[float] = None
    report: Optional[ConditionReport] = None


class TruthRequest(BaseModel):
    """Request model for the Monte Carlo truth oracle."""
    dgp_seed: int = config.DGP_SEED
    omega: int = Field(1, ge=1)
    confounded: bool = True
    t_star: int = Field(config.T_STAR, ge=2)
    regime: str = "never"
    m: int = Field(10000, ge=1000, le=1_000_000)
    seed: int = config.ROOT_SEED


class TruthResponse(BaseModel):
    """Monte Carlo truth with its standard error."""
    psi: float
    mc_se: float
    m: int
