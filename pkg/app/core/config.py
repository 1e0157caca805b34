"""
Configuration module for cdebench.
Handles environment variables and application settings.
"""

from typing import Optional
from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field


class Settings(BaseSettings):
    """Application settings loaded from environment variables (prefix ``CDE_``)."""

    # Application Settings
    app_name: str = Field(default="cdebench - Conditional Density Estimation Benchmarks")
    app_version: str = Field(default="0.1.0")
    debug: bool = Field(default=False)

    # Benchmark execution
    bench_threads: Optional[int] = Field(
        default=None, ge=1, description="Worker count for benchmark cells; overrides --parallel"
    )

    # Numerical integration defaults
    quadrature_points: int = Field(default=10000, ge=2, description="Gauss-Legendre nodes for 1-D integrals")
    mc_samples: int = Field(default=100000, ge=1, description="Samples for Monte Carlo moments")

    # Model serving
    host: str = Field(default="127.0.0.1")
    port: int = Field(default=8000)
    model_path: str = Field(default="model.json", description="Fitted estimator served by `cdebench serve`")

    # Logging
    log_level: str = Field(default="INFO")

    model_config = SettingsConfigDict(
        env_prefix="CDE_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )


# Global settings instance
settings = Settings()
