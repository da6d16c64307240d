# Centralized Logging Configuration
import logging
from typing import Optional

from blockout.config import get_settings


def configure_logging(level: Optional[str] = None) -> None:
    """
    Configure the root logger once for command-line runs.

    Args:
        level: Log level name; defaults to BLOCKOUT_LOG_LEVEL
    """
    settings = get_settings()
    logging.basicConfig(
        level=(level or settings.log_level).upper(),
        format=settings.log_format,
        force=True,
    )
