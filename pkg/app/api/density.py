"""
Density routes: model info, density on a grid, moments and tail risk.
"""

import logging

import numpy as np
from fastapi import APIRouter, HTTPException, Request

from app.models.schemas import (
    DensityGridRequest,
    DensityGridResponse,
    ModelInfoResponse,
    MomentReport,
    MomentsRequest,
    RiskRequest,
    RiskResponse,
)
from app.services.estimator import ConditionalDensityEstimator
from app.services.risk import conditional_moments, expected_shortfall, value_at_risk

logger = logging.getLogger(__name__)

router = APIRouter(tags=["density"])


def _estimator(request: Request) -> ConditionalDensityEstimator:
    est = request.app.state.estimator
    if est is None:
        raise HTTPException(status_code=503, detail="No model loaded")
    return est


@router.get("/model", response_model=ModelInfoResponse)
def model_info(request: Request):
    est = _estimator(request)
    return ModelInfoResponse(kind=est.kind, x_dim=est.x_dim, y_dim=est.y_dim, config=est.config_dict())


@router.post("/density/grid", response_model=DensityGridResponse)
def density_grid(body: DensityGridRequest, request: Request):
    """Evaluate ``p(y|x)`` on ``n`` evenly spaced y-values."""
    est = _estimator(request)
    y = np.linspace(body.grid.lo, body.grid.hi, body.grid.n)
    pdf = np.atleast_1d(est.pdf(body.x, y))
    logger.info(f"Density grid at x={body.x} with {body.grid.n} points")
    return DensityGridResponse(x=body.x, y=y.tolist(), pdf=pdf.tolist())


@router.post("/density/moments", response_model=MomentReport)
def density_moments(body: MomentsRequest, request: Request):
    return conditional_moments(_estimator(request), body.x)


@router.post("/density/risk", response_model=RiskResponse)
def density_risk(body: RiskRequest, request: Request):
    est = _estimator(request)
    return RiskResponse(
        x=body.x,
        alpha=body.alpha,
        value_at_risk=value_at_risk(est, body.x, body.alpha),
        expected_shortfall=expected_shortfall(est, body.x, body.alpha),
    )
