"""Monte Carlo experiments over bin widths, effect delays and estimator variants.

Each replicate is an independent job: generate one fine-grid panel from
seed ``derived_seed(root, r)``, coarsen it to every bin width and run every
estimator on the coarse panel. Jobs run on a process pool and come back in
submission order, so reports do not depend on the number of workers.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.errors import ConfigError, LabError
from app.models import (
    DgpParams,
    EstimatorSpec,
    ExperimentReport,
    ReplicateRecord,
    ReportRow,
    SweepConfig,
)
from app.services.coarsen import coarse_indices, coarsen_panel, coarsen_regime
from app.services.dgp import as_rct, generate_panel, sample_params, truth_mc, with_effect_delay
from app.services.estimators import PropensityModel, fit_propensity, run_estimator
from app.services.regimes import parse_regime
from app.utils import kvfile
from app.utils.parallel import map_ordered
from app.utils.rng import derived_seed, substream
from app.utils.tables import Target, write_frame

logger = logging.getLogger(__name__)

TRUTH_KEY = 1 << 30

MSE_IDENTITY = "mse = bias^2 + (n_reps - 1) / n_reps * variance; variance uses ddof=1"

_LIST_KEYS = {"deltas": kvfile.to_ints, "omegas": kvfile.to_ints, "alphas": kvfile.to_floats}


def load_sweep_config(path: Optional[Union[str, Path]] = None, **overrides) -> SweepConfig:
    """Read a flat ``key = value`` file; keyword overrides that are not None win."""
    values: dict = {}
    if path is not None:
        for key, raw in kvfile.read_kv(path).items():
            values[key] = _LIST_KEYS[key](raw) if key in _LIST_KEYS else raw
    values.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return SweepConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid sweep configuration: {e}") from e


@dataclass(frozen=True)
class _Job:
    params: DgpParams
    regime: str
    n: int
    root_seed: int
    replicate: int
    deltas: tuple[int, ...]
    estimators: tuple[EstimatorSpec, ...]


def _run_replicate(job: _Job) -> list[ReplicateRecord]:
    panel = generate_panel(job.params, job.n, derived_seed(job.root_seed, job.replicate))
    regime = parse_regime(job.regime, panel.t)
    records = []
    for delta in job.deltas:
        grid = coarse_indices(panel.t, delta)
        coarse = coarsen_panel(panel, grid)
        coarse_regime = coarsen_regime(regime, grid)
        models: dict[bool, PropensityModel] = {}
        for spec in job.estimators:
            try:
                model = None
                if spec.needs_propensity:
                    if spec.pool_time not in models:
                        models[spec.pool_time] = fit_propensity(coarse, pooled_time=spec.pool_time)
                    model = models[spec.pool_time]
                estimate = run_estimator(coarse, coarse_regime, spec, model)
            except (LabError, np.linalg.LinAlgError) as e:
                logger.warning("Replicate %d, delta=%d, %s failed: %s", job.replicate, delta,
                               spec.label, e)
                records.append(ReplicateRecord(estimator=spec.label, delta=delta,
                                               omega=job.params.omega, replicate=job.replicate,
                                               psi_hat=None, n_followers=0))
                continue
            records.append(ReplicateRecord(
                estimator=spec.label,
                delta=delta,
                omega=job.params.omega,
                replicate=job.replicate,
                psi_hat=estimate.psi_hat,
                n_followers=estimate.n_followers,
                ess=estimate.diagnostics.ess,
                fallback_fits=estimate.diagnostics.fallback_fits,
                degenerate_steps=estimate.diagnostics.degenerate_steps,
            ))
    return records


def summarize(
    records: list[ReplicateRecord],
    truth: float,
    truth_se: float,
    *,
    experiment: str,
    spec: EstimatorSpec,
    delta: int,
    omega: int,
    t_len: int,
) -> ReportRow:
    """Bias, variance and MSE of one cell's replicate estimates."""
    values = np.array([r.psi_hat for r in records if r.psi_hat is not None], dtype=float)
    values = values[np.isfinite(values)]
    ess = [r.ess for r in records if r.ess is not None]
    row = dict(
        experiment=experiment, estimator=spec.label, method=spec.method, variant=spec.variant,
        alpha=spec.clip_alpha, delta=delta, omega=omega, t_len=t_len, truth=truth,
        truth_se=truth_se, n_reps=int(values.size), n_failed=len(records) - int(values.size),
        mean_ess=float(np.mean(ess)) if ess else None,
        fallback_rate=float(np.mean([r.fallback_fits > 0 for r in records])) if records else 0.0,
        mean_estimate=None, bias=None, abs_bias=None, variance=None, mse=None,
        mc_se_of_bias=None,
    )
    if values.size:
        bias = float(values.mean() - truth)
        row.update(mean_estimate=float(values.mean()), bias=bias, abs_bias=abs(bias),
                   mse=float(np.mean((values - truth) ** 2)))
    if values.size >= 2:
        variance = float(values.var(ddof=1))
        row.update(variance=variance,
                   mc_se_of_bias=float(np.sqrt(variance / values.size + truth_se ** 2)))
    return ReportRow(**row)


def _run(
    experiment: str,
    cfg: SweepConfig,
    params_by_omega: dict[int, DgpParams],
    estimators: list[EstimatorSpec],
    deltas: list[int],
) -> ExperimentReport:
    t_star = cfg.t_star
    grids = {delta: coarse_indices(t_star, delta) for delta in deltas}
    regime = parse_regime(cfg.regime, t_star)
    for grid in grids.values():
        coarsen_regime(regime, grid)

    truths: dict[int, tuple[float, float]] = {}
    for omega, params in params_by_omega.items():
        truths[omega] = truth_mc(params, regime, cfg.truth_m, derived_seed(cfg.root_seed, TRUTH_KEY, omega))

    jobs = [
        _Job(params=params, regime=cfg.regime, n=cfg.n, root_seed=cfg.root_seed, replicate=r,
             deltas=tuple(deltas), estimators=tuple(estimators))
        for params in params_by_omega.values()
        for r in range(cfg.replications)
    ]
    logger.info("%s: %d replicates x %d bin widths x %d estimators on %d worker(s)",
                experiment, len(jobs), len(deltas), len(estimators), cfg.workers)
    records = [record for batch in map_ordered(_run_replicate, jobs, cfg.workers, kind="process")
               for record in batch]

    cells: dict[tuple[str, int, int], list[ReplicateRecord]] = {}
    for record in records:
        cells.setdefault((record.estimator, record.delta, record.omega), []).append(record)

    rows = []
    for omega in params_by_omega:
        truth, truth_se = truths[omega]
        for delta in deltas:
            for spec in estimators:
                row = summarize(cells.get((spec.label, delta, omega), []), truth, truth_se,
                                experiment=experiment, spec=spec, delta=delta, omega=omega,
                                t_len=grids[delta].length)
                logger.info("%s omega=%d delta=%d %s: bias=%s variance=%s", experiment, omega,
                            delta, spec.label, row.bias, row.variance)
                rows.append(row)

    return ExperimentReport(
        experiment=experiment,
        rows=rows,
        replicates=records,
        grids={delta: [int(i) for i in grid.indices] for delta, grid in grids.items()},
        truths=truths,
        root_seed=cfg.root_seed,
    )


def _base_params(cfg: SweepConfig) -> DgpParams:
    return sample_params(cfg.dgp_seed, t_star=cfg.t_star, noise_sd=cfg.noise_sd)


def run_sweep(cfg: SweepConfig, params: Optional[DgpParams] = None) -> ExperimentReport:
    """Every estimator at every bin width on the confounded model."""
    params = params or _base_params(cfg)
    return _run("sweep", cfg, {params.omega: params}, cfg.estimators, cfg.deltas)


def run_effect_delay(cfg: SweepConfig, params: Optional[DgpParams] = None) -> ExperimentReport:
    """IR and TMLE over (effect delay, bin width) pairs."""
    if not cfg.omegas:
        raise ConfigError("effect-delay sweep needs at least one omega")
    base = params or _base_params(cfg)
    estimators = [spec for spec in cfg.estimators if spec.method in ("ir", "tmle")]
    if not estimators:
        estimators = [EstimatorSpec(method="ir"), EstimatorSpec(method="tmle")]
    by_omega = {omega: with_effect_delay(base, omega) for omega in cfg.omegas}
    return _run("effect-delay", cfg, by_omega, estimators, cfg.deltas)


def run_rct(cfg: SweepConfig, params: Optional[DgpParams] = None) -> ExperimentReport:
    """Sweep on the randomized variant, with the naive follower mean added."""
    params = as_rct(params or _base_params(cfg))
    estimators = list(cfg.estimators)
    if not any(spec.method == "naive" for spec in estimators):
        estimators.append(EstimatorSpec(method="naive"))
    return _run("rct", cfg, {params.omega: params}, estimators, cfg.deltas)


def varred_estimators(alphas: list[float]) -> list[EstimatorSpec]:
    """Baselines plus clipping, time pooling and regime pooling variants."""
    specs = [EstimatorSpec(method=method) for method in ("ipw", "ir", "tmle")]
    for alpha in alphas:
        specs += [EstimatorSpec(method="ipw", clip_alpha=alpha),
                  EstimatorSpec(method="tmle", clip_alpha=alpha)]
    specs += [EstimatorSpec(method="ipw", pool_time=True), EstimatorSpec(method="tmle", pool_time=True)]
    specs += [EstimatorSpec(method="ir", pool_regimes=True),
              EstimatorSpec(method="tmle", pool_regimes=True)]
    return specs


def run_varred(cfg: SweepConfig, params: Optional[DgpParams] = None) -> ExperimentReport:
    """Variance-reduction comparison on the finest grid."""
    if cfg.deltas != [1]:
        logger.info("varred runs on the finest grid only; ignoring deltas %s", cfg.deltas)
    params = params or _base_params(cfg)
    return _run("varred", cfg, {params.omega: params}, varred_estimators(cfg.alphas), [1])


EXPERIMENTS = {
    "sweep": run_sweep,
    "effect-delay": run_effect_delay,
    "rct": run_rct,
    "varred": run_varred,
}


@dataclass(frozen=True)
class VarianceGap:
    gap: float
    lo: float
    hi: float

    @property
    def positive(self) -> bool:
        return self.lo > 0.0


def variance_gap_ci(
    report: ExperimentReport,
    first: str,
    second: str,
    delta: int,
    omega: int = 1,
    b: int = 1000,
    level: float = 95.0,
    seed: int = 0,
) -> VarianceGap:
    """Paired percentile bootstrap of Var(first) - Var(second) over shared replicates."""
    by_replicate: dict[str, dict[int, float]] = {first: {}, second: {}}
    for record in report.replicates:
        if (record.delta, record.omega) == (delta, omega) and record.estimator in by_replicate:
            if record.psi_hat is not None and np.isfinite(record.psi_hat):
                by_replicate[record.estimator][record.replicate] = record.psi_hat
    shared = sorted(set(by_replicate[first]) & set(by_replicate[second]))
    if len(shared) < 2:
        raise ConfigError(f"need two shared replicates for {first} vs {second} at delta={delta}")
    x = np.array([by_replicate[first][r] for r in shared])
    y = np.array([by_replicate[second][r] for r in shared])
    index = substream(seed, 0).integers(0, x.size, size=(b, x.size))
    gaps = x[index].var(axis=1, ddof=1) - y[index].var(axis=1, ddof=1)
    tail = (100.0 - level) / 2.0
    lo, hi = np.percentile(gaps, [tail, 100.0 - tail])
    return VarianceGap(gap=float(x.var(ddof=1) - y.var(ddof=1)), lo=float(lo), hi=float(hi))


def report_frame(report: ExperimentReport) -> pd.DataFrame:
    columns = list(ReportRow.model_fields)
    return pd.DataFrame([row.model_dump() for row in report.rows], columns=columns)


def report_header(report: ExperimentReport) -> str:
    lines = [f"experiment={report.experiment} root_seed={report.root_seed}", MSE_IDENTITY]
    lines += [f"truth omega={omega}: {psi!r} (mc_se {se!r})" for omega, (psi, se) in report.truths.items()]
    lines += [f"grid delta={delta}: {' '.join(map(str, grid))}" for delta, grid in report.grids.items()]
    return "\n".join(lines)


def write_report(report: ExperimentReport, target: Target) -> None:
    write_frame(report_frame(report), target, report_header(report))


def write_replicates(report: ExperimentReport, target: Target) -> None:
    frame = pd.DataFrame([record.model_dump() for record in report.replicates],
                         columns=list(ReplicateRecord.model_fields))
    write_frame(frame, target, f"experiment={report.experiment} root_seed={report.root_seed}")


def gnuplot_script(report: ExperimentReport, csv_name: str) -> str:
    """Absolute bias against bin width, one line per (estimator, omega)."""
    series = list(dict.fromkeys((row.estimator, row.omega) for row in report.rows))
    lines = [
        "set datafile separator ','",
        "set datafile columnheaders",
        "set logscale x 2",
        "set xlabel 'bin width'",
        "set ylabel 'absolute bias'",
        "set key outside right",
        f"set title '{report.experiment}'",
    ]
    plots = []
    for estimator, omega in series:
        title = estimator if len({o for _, o in series}) == 1 else f"{estimator} omega={omega}"
        plots.append(
            f"'{csv_name}' using 'delta':((strcol('estimator') eq '{estimator}' && "
            f"column('omega') == {omega}) ? column('abs_bias') : 1/0) "
            f"with linespoints title '{title}'"
        )
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"
