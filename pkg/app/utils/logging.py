"""
Logging utilities and configuration.
"""

import logging
import sys
from typing import Optional
from app.core.config import settings

_HANDLER_NAME = "cdebench-stderr"


def setup_logging(level: Optional[str] = None):
    """Configure logging for the application.

    Log records go to stderr so that command output on stdout stays clean.
    Calling this more than once only updates the level.
    """
    level_name = (level or settings.log_level).upper()
    log_level = getattr(logging, level_name, logging.INFO)

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)

    if not any(h.get_name() == _HANDLER_NAME for h in root_logger.handlers):
        # Create formatter
        formatter = logging.Formatter(
            fmt='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )

        # Console handler
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.set_name(_HANDLER_NAME)
        console_handler.setFormatter(formatter)
        root_logger.addHandler(console_handler)

    # Set specific loggers
    logging.getLogger("uvicorn").setLevel(log_level)
    logging.getLogger("fastapi").setLevel(log_level)
    logging.getLogger("httpx").setLevel(logging.WARNING)

    logging.getLogger(__name__).debug(f"Logging configured with level: {level_name}")
