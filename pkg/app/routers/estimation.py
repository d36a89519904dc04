"""Estimation router for the discretization bias lab API."""

import io
import logging
from typing import Any, Optional

from fastapi import APIRouter, File, Form, HTTPException, UploadFile, status

from app.errors import LabError, NumericError
from app.models import (
    EstimateResponse,
    EstimatorSpec,
    ExactRequest,
    ExactResponse,
    TruthRequest,
    TruthResponse,
)
from app.services import exactg
from app.services.coarsen import coarse_indices, coarsen_panel, coarsen_regime
from app.services.dgp import as_rct, sample_params, truth_mc, with_effect_delay
from app.services.estimators import bootstrap_ci, run_estimator
from app.services.regimes import parse_regime
from app.utils.tables import read_panel

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/api", tags=["estimation"])


def _http_error(e: LabError) -> HTTPException:
    code = (status.HTTP_422_UNPROCESSABLE_ENTITY if isinstance(e, NumericError)
            else status.HTTP_400_BAD_REQUEST)
    return HTTPException(status_code=code, detail=f"{e.category}: {e}")


@router.post("/estimate", response_model=EstimateResponse)
async def estimate(
    panel_csv: UploadFile = File(..., description="Long panel CSV"),
    outcome_csv: UploadFile = File(..., description="Outcome CSV"),
    method: str = Form("tmle"),
    regime: str = Form("never"),
    delta: int = Form(1, ge=1),
    clip: Optional[float] = Form(None),
    pool_time: bool = Form(False),
    pool_regimes: bool = Form(False),
    bootstrap: int = Form(0, ge=0),
    seed: int = Form(0),
) -> Any:
    """
    Estimate E[Y^a] on an uploaded panel.

    The panel is coarsened to bin width ``delta`` before estimation. A
    percentile bootstrap interval is added when ``bootstrap`` replicates
    are requested.
    """
    try:
        spec = EstimatorSpec(method=method, clip_alpha=clip, pool_time=pool_time,
                             pool_regimes=pool_regimes)
    except ValueError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e)) from e

    try:
        panel = read_panel(io.StringIO((await panel_csv.read()).decode()),
                           io.StringIO((await outcome_csv.read()).decode()))
        grid = coarse_indices(panel.t, delta)
        coarse = coarsen_panel(panel, grid)
        coarse_regime = coarsen_regime(parse_regime(regime, panel.t), grid)
        result = run_estimator(coarse, coarse_regime, spec)
        response = EstimateResponse(estimate=result, delta=delta,
                                    grid=[int(i) for i in grid.indices])
        if bootstrap:
            interval = bootstrap_ci(coarse, coarse_regime, spec, b=bootstrap, seed=seed)
            response.ci_lo, response.ci_hi = interval.lo, interval.hi
            response.bootstrap_skipped = interval.skipped
    except LabError as e:
        raise _http_error(e) from e
    except UnicodeDecodeError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST,
                            detail="uploads must be UTF-8 CSV") from e

    logger.info("Estimated %s under %s at delta=%d: %s", spec.label, regime, delta,
                result.psi_hat)
    return response


@router.post("/exact", response_model=ExactResponse)
async def exact(request: ExactRequest) -> Any:
    """
    Exact g-computation on a small MDP.

    ``value`` is the fine-grid g-formula, ``coarsened`` the g-formula of the
    coarsened law, ``policy`` the matching stochastic policy value, ``bound``
    the discretization bias interval and ``check`` the zero-bias conditions.
    """
    try:
        mdp = exactg.parse_mdp(request.mdp)
        regime = parse_regime(request.regime, mdp.horizon)
        grid = exactg.exact_grid(mdp, request.delta)
        response = ExactResponse(action=request.action, grid=[int(i) for i in grid.indices])
        if request.action == "value":
            response.value = exactg.gform_uncoarsened(mdp, regime)
        elif request.action == "coarsened":
            response.value = exactg.gform_coarsened(mdp, regime, grid)
        elif request.action == "policy":
            response.value = exactg.stochastic_policy_value(mdp, regime, grid)
        elif request.action == "bound":
            response.lo, response.hi = exactg.bias_bound(mdp, regime, grid)
        else:
            response.report = exactg.check_conditions(mdp, regime, grid)
    except LabError as e:
        raise _http_error(e) from e
    return response


@router.post("/simulate/truth", response_model=TruthResponse)
async def simulate_truth(request: TruthRequest) -> Any:
    """Monte Carlo E[Y^a] under the shipped model (or its randomized variant)."""
    try:
        params = with_effect_delay(sample_params(request.dgp_seed, t_star=request.t_star),
                                   request.omega)
        if not request.confounded:
            params = as_rct(params)
        regime = parse_regime(request.regime, request.t_star)
        psi, mc_se = truth_mc(params, regime, request.m, request.seed)
    except LabError as e:
        raise _http_error(e) from e
    return TruthResponse(psi=psi, mc_se=mc_se, m=request.m)
