"""sxextract utility functions and helpers.

Contains small shared helpers used across services and the CLI.

This module provides:
- Timing decorator and duration formatting
- Stable hashing of plain data
- Atomic creation of output directories
"""

from __future__ import annotations

import functools
import hashlib
import json
import os
import shutil
import tempfile
import time
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any, TypeVar

from sxextract.core.logging import get_logger

__all__: list[str] = [
    "timer",
    "format_duration",
    "stable_hash",
    "atomic_output_dir",
]

F = TypeVar("F", bound=Callable[..., Any])

logger = get_logger("utils")


def timer(func: F) -> F:
    """Decorator to log function execution time."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        start_time = time.perf_counter()
        result = func(*args, **kwargs)
        duration = time.perf_counter() - start_time
        logger.info("timing", extra={"function": func.__qualname__, "duration": format_duration(duration)})
        return result

    return wrapper  # type: ignore


def format_duration(seconds: float) -> str:
    """Format duration in seconds to human-readable string."""
    if seconds < 1:
        return f"{seconds * 1000:.1f}ms"
    elif seconds < 60:
        return f"{seconds:.2f}s"
    elif seconds < 3600:
        return f"{seconds / 60:.1f}m"
    else:
        return f"{seconds / 3600:.1f}h"


def stable_hash(data: Any, length: int = 16) -> str:
    """Hex digest of the canonical JSON rendering of ``data``."""
    payload = json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:length]


@contextmanager
def atomic_output_dir(target: Path) -> Iterator[Path]:
    """Yield a staging directory that is renamed onto ``target`` on success.

    An existing ``target`` is replaced only once the new contents are complete;
    on failure the staging directory is removed and ``target`` is untouched.
    """
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if target.exists():
        backup = target.with_name(f".{target.name}.old")
        shutil.rmtree(backup, ignore_errors=True)
        os.replace(target, backup)
        os.replace(staging, target)
        shutil.rmtree(backup, ignore_errors=True)
    else:
        os.replace(staging, target)
