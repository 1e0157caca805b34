"""Core module for configuration and errors."""

from .config import settings, Settings
from .errors import CdeError

__all__ = ["settings", "Settings", "CdeError"]
