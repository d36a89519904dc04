"""Command line entry point: ``dbias <command> [options]``.

Exit codes: 0 success, 2 configuration, 3 data, 4 numeric, 1 anything else
raised by the lab.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from app.config import config, configure_logging
from app.errors import ConfigError, LabError
from app.models import EstimatorSpec
from app.services import exactg, harness
from app.services.coarsen import coarse_indices, coarsen_panel, coarsen_regime
from app.services.dgp import (
    as_rct,
    generate_panel,
    load_params,
    sample_params,
    save_params,
    with_effect_delay,
    with_hazards,
)
from app.services.estimators import bootstrap_ci, run_estimator
from app.services.regimes import parse_regime
from app.utils import kvfile
from app.utils.tables import estimate_frame, read_panel, write_frame, write_panel

logger = logging.getLogger(__name__)


def _out_path(path: Optional[str], default: str) -> Path:
    target = Path(path) if path else Path(config.OUTPUT_DIR) / default
    target.parent.mkdir(parents=True, exist_ok=True)
    return target


def cmd_simulate(args: argparse.Namespace) -> int:
    params = load_params(args.params) if args.params else sample_params(args.dgp_seed, t_star=args.t_star)
    if args.omega:
        params = with_effect_delay(params, args.omega)
    if args.rct:
        params = as_rct(params)
    if args.censor_rate is not None or args.discharge_rate is not None:
        params = with_hazards(params, args.censor_rate, args.discharge_rate)

    panel = generate_panel(params, args.n, args.seed)
    if args.delta > 1:
        panel = coarsen_panel(panel, coarse_indices(panel.t, args.delta))
    prefix = _out_path(args.out, "panel")
    panel_path = prefix.with_name(prefix.name + "_panel.csv")
    outcome_path = prefix.with_name(prefix.name + "_outcome.csv")
    write_panel(panel, panel_path, outcome_path)
    if args.save_params:
        save_params(params, args.save_params)
    print(f"wrote {panel.n} subjects x {panel.t} time points to {panel_path} and {outcome_path}")
    return 0


def _sweep_config(args: argparse.Namespace):
    return harness.load_sweep_config(
        args.config,
        dgp_seed=args.dgp_seed,
        root_seed=args.seed,
        n=args.n,
        replications=args.replications,
        t_star=args.t_star,
        deltas=kvfile.to_ints(args.deltas) if args.deltas else None,
        omegas=kvfile.to_ints(args.omegas) if args.omegas else None,
        alphas=kvfile.to_floats(args.alphas) if args.alphas else None,
        estimators=args.estimators,
        regime=args.regime,
        truth_m=args.truth_m,
        workers=args.workers,
        output=args.out,
    )


def cmd_experiment(args: argparse.Namespace) -> int:
    cfg = _sweep_config(args)
    params = load_params(args.params) if args.params else None
    report = harness.EXPERIMENTS[args.command](cfg, params)

    target = _out_path(cfg.output, f"{args.command}.csv")
    harness.write_report(report, target)
    if args.replicates:
        harness.write_replicates(report, target.with_name(target.stem + "_replicates.csv"))
    if args.emit_gnuplot:
        script = target.with_suffix(".gp")
        script.write_text(harness.gnuplot_script(report, target.name))
    print(f"wrote {len(report.rows)} rows to {target}")
    return 0


def _spec(args: argparse.Namespace) -> EstimatorSpec:
    try:
        return EstimatorSpec(method=args.method, clip_alpha=args.clip, pool_time=args.pool_time,
                             pool_regimes=args.pool_regimes)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def cmd_estimate(args: argparse.Namespace) -> int:
    spec = _spec(args)
    panel = read_panel(args.panel, args.outcome)
    grid = coarse_indices(panel.t, args.delta)
    coarse = coarsen_panel(panel, grid)
    regime = coarsen_regime(parse_regime(args.regime, panel.t), grid)
    estimate = run_estimator(coarse, regime, spec)

    ci_lo = ci_hi = None
    replicates = args.bootstrap if args.command == "estimate" else args.replicates
    if replicates:
        interval = bootstrap_ci(coarse, regime, spec, b=replicates, level=args.level,
                                seed=args.seed, workers=args.workers)
        ci_lo, ci_hi = interval.lo, interval.hi
    logger.info("%s under %s at delta=%d (%d retained points): %s", spec.label, regime,
                args.delta, grid.length, estimate.psi_hat)
    write_frame(estimate_frame(estimate, ci_lo, ci_hi), args.out or sys.stdout)
    return 0


def cmd_exact(args: argparse.Namespace) -> int:
    try:
        mdp = exactg.parse_mdp(Path(args.mdp).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read {args.mdp}: {e}") from e
    regime = parse_regime(args.regime, mdp.horizon)
    grid = exactg.exact_grid(mdp, args.delta)

    result: dict = {"action": args.action, "grid": [int(i) for i in grid.indices]}
    if args.action == "value":
        result["value"] = exactg.gform_uncoarsened(mdp, regime)
    elif args.action == "coarsened":
        result["value"] = exactg.gform_coarsened(mdp, regime, grid)
    elif args.action == "policy":
        result["value"] = exactg.stochastic_policy_value(mdp, regime, grid)
    elif args.action == "bound":
        result["lo"], result["hi"] = exactg.bias_bound(mdp, regime, grid, workers=args.workers)
    else:
        result["report"] = exactg.check_conditions(mdp, regime, grid).model_dump()
    print(json.dumps(result, indent=2))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("app.main:app", host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dbias", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default=None, help="overrides DBIAS_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="generate a synthetic panel")
    simulate.add_argument("--params", help="DgpParams key-value file")
    simulate.add_argument("--dgp-seed", type=int, default=config.DGP_SEED)
    simulate.add_argument("--t-star", type=int, default=config.T_STAR)
    simulate.add_argument("--n", type=int, default=config.SUBJECTS)
    simulate.add_argument("--seed", type=int, default=config.ROOT_SEED)
    simulate.add_argument("--omega", type=int, default=None)
    simulate.add_argument("--rct", action="store_true", help="unconfounded treatment")
    simulate.add_argument("--censor-rate", type=float, default=None)
    simulate.add_argument("--discharge-rate", type=float, default=None)
    simulate.add_argument("--delta", type=int, default=1)
    simulate.add_argument("--out", help="output prefix")
    simulate.add_argument("--save-params", help="write the parameters used")
    simulate.set_defaults(handler=cmd_simulate)

    for name, text in (("sweep", "bias/variance/MSE over bin widths"),
                       ("effect-delay", "IR and TMLE over effect delays and bin widths"),
                       ("rct", "sweep on the randomized model"),
                       ("varred", "variance-reduction variants at the finest grid")):
        experiment = sub.add_parser(name, help=text)
        experiment.add_argument("--config", help="sweep key-value file")
        experiment.add_argument("--params", help="DgpParams key-value file")
        experiment.add_argument("--dgp-seed", type=int, default=None)
        experiment.add_argument("--seed", type=int, default=None, help="root seed")
        experiment.add_argument("--n", type=int, default=None)
        experiment.add_argument("--replications", type=int, default=None)
        experiment.add_argument("--t-star", type=int, default=None)
        experiment.add_argument("--deltas", help="comma separated bin widths")
        experiment.add_argument("--omegas", help="comma separated effect delays")
        experiment.add_argument("--alphas", help="comma separated clipping percentiles")
        experiment.add_argument("--estimators", help="e.g. ipw,ir,tmle+clip=2.5")
        experiment.add_argument("--regime", default=None)
        experiment.add_argument("--truth-m", type=int, default=None)
        experiment.add_argument("--workers", type=int, default=None)
        experiment.add_argument("--out", help="report CSV path")
        experiment.add_argument("--replicates", action="store_true",
                                help="also write per-replicate estimates")
        experiment.add_argument("--emit-gnuplot", action="store_true")
        experiment.set_defaults(handler=cmd_experiment)

    for name in ("estimate", "bootstrap"):
        estimate = sub.add_parser(name, help="estimate E[Y^a] on a panel CSV")
        estimate.add_argument("--panel", required=True)
        estimate.add_argument("--outcome", required=True)
        estimate.add_argument("--method", default="tmle", choices=["ipw", "ir", "tmle", "naive"])
        estimate.add_argument("--regime", default="never")
        estimate.add_argument("--delta", type=int, default=1)
        estimate.add_argument("--clip", type=float, default=None)
        estimate.add_argument("--pool-time", action="store_true")
        estimate.add_argument("--pool-regimes", action="store_true")
        estimate.add_argument("--seed", type=int, default=config.ROOT_SEED)
        estimate.add_argument("--workers", type=int, default=config.WORKERS)
        estimate.add_argument("--level", type=float, default=95.0)
        estimate.add_argument("--out", help="CSV path (default: standard output)")
        if name == "estimate":
            estimate.add_argument("--bootstrap", type=int, default=0,
                                  help="bootstrap replicates (0 = none)")
        else:
            estimate.add_argument("--replicates", type=int, default=config.BOOTSTRAP_REPLICATES)
        estimate.set_defaults(handler=cmd_estimate)

    exact = sub.add_parser("exact", help="exact g-computation on an MDP file")
    exact.add_argument("--mdp", required=True)
    exact.add_argument("--regime", default="never")
    exact.add_argument("--delta", type=int, default=1)
    exact.add_argument("--action", default="value",
                       choices=["value", "coarsened", "policy", "bound", "check"])
    exact.add_argument("--workers", type=int, default=config.WORKERS)
    exact.set_defaults(handler=cmd_exact)

    serve = sub.add_parser("serve", help="run the HTTP API")
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=8080)
    serve.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except LabError as e:
        logger.error("%s error: %s", e.category, e)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
