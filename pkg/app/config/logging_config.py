import logging
import sys

import structlog

from app.config.config import settings


def _stderr_logger(*args) -> structlog.PrintLogger:
    return structlog.PrintLogger(file=sys.stderr)


def configure_logging(level: str = None, fmt: str = None) -> None:
    """
    Configure structlog for the whole process

    Args:
        level: Log level name, defaults to settings.LOG_LEVEL
        fmt: "console" or "json", defaults to settings.LOG_FORMAT
    """
    level = (level or settings.LOG_LEVEL).upper()
    fmt = (fmt or settings.LOG_FORMAT).lower()

    renderer = structlog.processors.JSONRenderer(sort_keys=True) if fmt == "json" \
        else structlog.dev.ConsoleRenderer(colors=False)

    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso", utc=True),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(
            logging.getLevelName(level) if isinstance(logging.getLevelName(level), int) else logging.INFO
        ),
        # stdout is reserved for report tables
        logger_factory=_stderr_logger,
        cache_logger_on_first_use=False,
    )
