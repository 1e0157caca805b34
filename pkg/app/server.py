"""
FastAPI application serving one fitted conditional density estimator.
"""

import logging
from contextlib import asynccontextmanager
from datetime import datetime, timezone
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.encoders import jsonable_encoder
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from app.api import density_router
from app.core.config import settings
from app.core.errors import CdeError
from app.models.schemas import ErrorResponse, HealthResponse
from app.services.estimator import ConditionalDensityEstimator
from app.services.registry import load_model

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Load the model from ``settings.model_path`` unless one was supplied."""
    logger.info(f"Starting {settings.app_name} v{settings.app_version}")
    if app.state.estimator is None:
        try:
            app.state.estimator = load_model(settings.model_path)
        except CdeError as e:
            logger.error(f"Error loading model from {settings.model_path}: {e}")
            raise
    logger.info(f"Serving {app.state.estimator.kind.value} model")

    yield

    logger.info("Shutting down application...")


def _error_body(error: str, message: str, details: Optional[dict] = None) -> dict:
    return jsonable_encoder(
        ErrorResponse(error=error, message=message, details=details, timestamp=datetime.now(timezone.utc))
    )


def create_app(estimator: Optional[ConditionalDensityEstimator] = None) -> FastAPI:
    app = FastAPI(
        title=settings.app_name,
        version=settings.app_version,
        description="Conditional densities, moments and tail risk from a fitted estimator.",
        docs_url="/docs",
        redoc_url="/redoc",
        lifespan=lifespan,
        debug=settings.debug,
    )
    app.state.estimator = estimator

    @app.exception_handler(RequestValidationError)
    async def validation_exception_handler(request: Request, exc: RequestValidationError):
        logger.error(f"Validation error: {exc.errors()}")
        return JSONResponse(
            status_code=422,
            content=_error_body("ValidationError", "Request validation failed", {"errors": exc.errors()}),
        )

    @app.exception_handler(CdeError)
    async def cde_exception_handler(request: Request, exc: CdeError):
        # usage errors are the caller's fault; the rest are model state conflicts
        status = 422 if exc.exit_code == 2 else 409
        logger.warning(f"{type(exc).__name__} on {request.url.path}: {exc}")
        return JSONResponse(status_code=status, content=_error_body(type(exc).__name__, str(exc)))

    app.include_router(density_router)

    @app.get("/health", response_model=HealthResponse, tags=["health"])
    async def health_check():
        status = "healthy" if app.state.estimator is not None else "unhealthy"
        response = HealthResponse(status=status, version=settings.app_version)
        if status == "unhealthy":
            return JSONResponse(status_code=503, content=jsonable_encoder(response))
        return response

    return app
