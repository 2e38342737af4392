"""
portsim Structured Logging Configuration
structlog event dicts rendered through the stdlib `portsim` logger.
"""
import logging
import sys
from typing import Optional

import structlog
from structlog.types import Processor

from portsim.config import get_settings

LOGGER_NAME = "portsim"


def setup_logging(level: Optional[str] = None, json_logs: Optional[bool] = None):
    """
    Configure structured logging for portsim.

    Rendered lines are handed to the stdlib logger, so the output stream is
    the one held by the root handlers when a line is written. A closed or
    swapped stderr can never make a simulation fail.
    """
    settings = get_settings()
    level_name = (level or ("DEBUG" if settings.DEBUG else settings.LOG_LEVEL)).upper()
    log_level = getattr(logging, level_name, logging.INFO)

    if json_logs is None:
        json_logs = settings.LOG_FORMAT == "json" and not settings.DEBUG

    processors: list[Processor] = [
        structlog.contextvars.merge_contextvars,
        structlog.processors.add_log_level,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.processors.StackInfoRenderer(),
        structlog.processors.UnicodeDecoder(),
    ]
    if json_logs:
        processors += [structlog.processors.format_exc_info, structlog.processors.JSONRenderer()]
    else:
        processors.append(structlog.dev.ConsoleRenderer(colors=sys.stderr.isatty()))

    structlog.configure(
        processors=processors,
        wrapper_class=structlog.make_filtering_bound_logger(log_level),
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )

    # no-op when the root logger already has handlers (e.g. under a test runner)
    logging.basicConfig(format="%(message)s", stream=sys.stderr, level=log_level)
    logging.getLogger(LOGGER_NAME).setLevel(log_level)

    # Quiet noisy libraries
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.getLogger("PIL").setLevel(logging.WARNING)

    return structlog.get_logger(LOGGER_NAME)
