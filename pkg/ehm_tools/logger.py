"""Structured logging for ehm-tools.

Every record carries a ``context`` dict. Fitting stages bind their name once
and log iterations against it; the CLI and MCP server choose between a
readable ``key=value`` rendering and one JSON object per line.
"""

import json
import logging
import os
import sys
from datetime import datetime, timezone
from typing import Any

PLAIN_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class StructuredLogger:
    """Wrapper around a stdlib logger that attaches context to each record.

    Context bound with :meth:`bind` is merged under the per-call context, so
    a call can override a bound key.
    """

    def __init__(self, name: str, context: dict[str, Any] | None = None) -> None:
        self.name = name
        self.logger = logging.getLogger(name)
        self.bound: dict[str, Any] = dict(context or {})

    def bind(self, **context: Any) -> "StructuredLogger":
        """Return a logger for the same channel with extra bound context."""
        return StructuredLogger(self.name, {**self.bound, **context})

    def log(self, level: int, message: str, context: dict[str, Any] | None = None) -> None:
        # Skips building the record (and its context) for disabled levels.
        if not self.logger.isEnabledFor(level):
            return
        record = self.logger.makeRecord(self.name, level, "", 0, message, (), None)
        record.context = {**self.bound, **(context or {})}
        self.logger.handle(record)

    def is_debug(self) -> bool:
        """Return True when DEBUG records would be emitted."""
        return self.logger.isEnabledFor(logging.DEBUG)

    def debug(self, message: str, context: dict[str, Any] | None = None) -> None:
        self.log(logging.DEBUG, message, context)

    def info(self, message: str, context: dict[str, Any] | None = None) -> None:
        self.log(logging.INFO, message, context)

    def warning(self, message: str, context: dict[str, Any] | None = None) -> None:
        self.log(logging.WARNING, message, context)

    def error(self, message: str, context: dict[str, Any] | None = None) -> None:
        self.log(logging.ERROR, message, context)

    def critical(self, message: str, context: dict[str, Any] | None = None) -> None:
        self.log(logging.CRITICAL, message, context)


class ContextFormatter(logging.Formatter):
    """Plain-text formatter that appends the record context as ``key=value``."""

    def __init__(self) -> None:
        super().__init__(PLAIN_FORMAT)

    def format(self, record: logging.LogRecord) -> str:
        line = super().format(record)
        context = getattr(record, "context", None)
        if context:
            line += " " + " ".join(f"{k}={_short(v)}" for k, v in context.items())
        return line


def _short(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


class JsonFormatter(logging.Formatter):
    """One JSON object per record; values without a JSON form are stringified."""

    def format(self, record: logging.LogRecord) -> str:
        log_data = {
            "timestamp": datetime.fromtimestamp(record.created, timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "context": getattr(record, "context", {}),
        }
        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)
        return json.dumps(log_data, default=str)


def setup_logging(level: str | None = None, json_format: bool | None = None) -> None:
    """Configure the root logger to write to stderr.

    Unset arguments fall back to the ``EHM_LOG_LEVEL`` and ``EHM_LOG_JSON``
    environment variables, then to INFO with plain formatting. Stdout is left
    to command output.

    Args:
        level: The logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        json_format: Whether to emit JSON lines
    """
    if level is None:
        level = os.environ.get("EHM_LOG_LEVEL", "INFO")
    if json_format is None:
        json_format = os.environ.get("EHM_LOG_JSON", "").lower() in {"1", "true", "yes"}

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter() if json_format else ContextFormatter())
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO), handlers=[handler], force=True
    )
