# src/utils/logging.py
"""
Logging Configuration

Configures structured logging with structlog. JSON output by default, a
console renderer for interactive command-line use.

Version: 1.0.0
"""
import logging
import sys
import threading

import structlog

from src.utils.constants import (
    LOG_FIELD_MAX_LENGTH,
    VALID_LOG_FORMATS,
    VALID_LOG_LEVELS,
)

# Explicit public API
__all__ = [
    "setup_logging",
    "get_logger",
    "is_logging_configured",
    "clear_logging_context",
    "bind_logging_context",
]

# Module-level state to track configuration (thread-safe)
_logging_configured = False
_logging_lock = threading.Lock()


def _sanitize_log_values(
    logger: structlog.BoundLogger, method_name: str, event_dict: dict
) -> dict:
    """
    Sanitize and truncate log field values.

    - Removes control characters
    - Truncates excessively long values (array reprs, tracebacks)
    """
    for key, value in list(event_dict.items()):
        if isinstance(value, str):
            value = "".join(
                char for char in value if char.isprintable() or char in "\n\t"
            )
            if len(value) > LOG_FIELD_MAX_LENGTH:
                value = value[:LOG_FIELD_MAX_LENGTH] + "...[truncated]"
            event_dict[key] = value
    return event_dict


def is_logging_configured() -> bool:
    """
    Check if logging has been configured.

    Returns:
        True if setup_logging() has been called successfully
    """
    return _logging_configured


def clear_logging_context() -> None:
    """
    Clear all bound context variables.

    Called at the start of each command so run context from a previous
    command in the same process does not leak.
    """
    structlog.contextvars.clear_contextvars()


def bind_logging_context(**values: object) -> None:
    """Bind key/value pairs to every subsequent log line of this context."""
    structlog.contextvars.bind_contextvars(**values)


def setup_logging(
    log_level: str = "INFO", log_format: str = "json", force: bool = False
) -> None:
    """
    Configure structured logging.

    Idempotent and thread-safe; later calls are ignored unless force=True.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_format: "json" or "console"
        force: If True, reconfigure even if already configured

    Raises:
        ValueError: If log_level or log_format is not valid
    """
    global _logging_configured

    with _logging_lock:
        if _logging_configured and not force:
            return

        log_level_upper = log_level.upper()
        if log_level_upper not in VALID_LOG_LEVELS:
            raise ValueError(
                f"Invalid log level: {log_level}. "
                f"Must be one of: {', '.join(sorted(VALID_LOG_LEVELS))}"
            )
        if log_format not in VALID_LOG_FORMATS:
            raise ValueError(
                f"Invalid log format: {log_format}. "
                f"Must be one of: {', '.join(sorted(VALID_LOG_FORMATS))}"
            )

        # Order matters: context first, rendering last
        renderer = (
            structlog.processors.JSONRenderer(sort_keys=True)
            if log_format == "json"
            else structlog.dev.ConsoleRenderer(colors=False)
        )
        processors = [
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            _sanitize_log_values,
            renderer,
        ]

        # Logs go to stderr; stdout is reserved for command output
        structlog.configure(
            processors=processors,
            wrapper_class=structlog.make_filtering_bound_logger(
                logging.getLevelName(log_level_upper)
            ),
            logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
            cache_logger_on_first_use=not force,
        )

        root_logger = logging.getLogger()
        root_logger.setLevel(getattr(logging, log_level_upper))
        for handler in root_logger.handlers[:]:
            root_logger.removeHandler(handler)
        handler = logging.StreamHandler(sys.stderr)
        handler.setLevel(getattr(logging, log_level_upper))
        handler.setFormatter(logging.Formatter("%(message)s"))
        root_logger.addHandler(handler)

        _logging_configured = True

    logger = structlog.get_logger(__name__)
    logger.debug(
        "logging_configured",
        log_level=log_level_upper,
        log_format=log_format,
    )


def get_logger(name: str) -> structlog.BoundLoggerBase:
    """
    Get a configured structlog logger.

    Modules should use this instead of importing structlog directly.

    Args:
        name: Logger name (typically __name__)

    Returns:
        structlog BoundLogger instance

    Example:
        from src.utils.logging import get_logger
        logger = get_logger(__name__)
        logger.info("epoch_completed", epoch=3)
    """
    return structlog.get_logger(name)
