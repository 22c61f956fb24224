"""Structured logging setup for sxextract."""

from __future__ import annotations

import importlib
import logging
from contextvars import ContextVar
from logging import StreamHandler, getLogger

_run_id: ContextVar[str] = ContextVar("sxextract_run_id", default="-")

LOGGER_NAME = "sxextract"


class RunContextFilter(logging.Filter):
    """Ensure every log record contains a run_id field."""

    def filter(self, record: logging.LogRecord) -> bool:
        record.run_id = _run_id.get()
        return True


def set_run_id(run_id: str) -> None:
    """Stamp subsequent log records of this context with ``run_id``."""
    _run_id.set(run_id)


def get_run_id() -> str:
    return _run_id.get()


def _json_formatter(log_format: str) -> logging.Formatter | None:
    for module_name in ("pythonjsonlogger.json", "pythonjsonlogger.jsonlogger"):
        try:
            module = importlib.import_module(module_name)
            return module.JsonFormatter(log_format)  # type: ignore[no-any-return]
        except (ImportError, AttributeError):
            continue
    return None


def setup_logging(level: str = "INFO", fmt: str = "json") -> logging.Logger:
    """Install one stream handler on the package logger.

    ``fmt="json"`` uses python-json-logger; ``fmt="text"`` (or a missing
    json formatter) falls back to a plain line format.
    """
    logger = getLogger(LOGGER_NAME)
    handler = StreamHandler()

    log_format = "%(asctime)s %(levelname)s %(name)s %(run_id)s %(message)s"
    formatter: logging.Formatter = logging.Formatter(log_format)
    if fmt == "json":
        formatter = _json_formatter(log_format) or formatter

    handler.setFormatter(formatter)
    handler.addFilter(RunContextFilter())

    # Avoid duplicate handlers on repeated setup
    for existing in [h for h in logger.handlers if isinstance(h, StreamHandler)]:
        logger.removeHandler(existing)
    logger.addHandler(handler)
    logger.setLevel(level.upper())
    logger.propagate = False
    return logger


def get_logger(name: str) -> logging.Logger:
    """Child logger under the package namespace."""
    if name.startswith(LOGGER_NAME):
        return getLogger(name)
    return getLogger(f"{LOGGER_NAME}.{name}")
