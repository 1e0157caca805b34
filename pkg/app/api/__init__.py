"""API routes module."""

from .density import router as density_router

__all__ = [
    "density_router",
]
