"""Logging setup and the in-memory record of run failures and solver warnings.

``DEBUG`` selects the root level: unset or ``0`` keeps warnings only, ``1`` adds
run progress, ``2`` adds per-solve diagnostics and ``3`` additionally has numpy
report floating-point underflow.  Events recorded with :func:`record_run_error`
are kept in a bounded history (``WORMHOLE_ERROR_HISTORY_LIMIT``) that the CLI
and the run summary read back.
"""

from __future__ import annotations

import logging
import os
import sys
from collections import Counter, deque
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any, Literal, Mapping

import numpy as np

_LOGGER = logging.getLogger("wormhole_heat.logging")

Severity = Literal["error", "warning"]

_DEFAULT_HISTORY = 50
_LEVELS = (logging.WARNING, logging.INFO, logging.DEBUG, logging.DEBUG)
_CONFIGURED = False


def _history_limit() -> int:
    raw = os.getenv("WORMHOLE_ERROR_HISTORY_LIMIT")
    if raw is None:
        return _DEFAULT_HISTORY
    try:
        return max(1, int(raw))
    except ValueError:
        _LOGGER.warning("Invalid WORMHOLE_ERROR_HISTORY_LIMIT %r; keeping %d", raw, _DEFAULT_HISTORY)
        return _DEFAULT_HISTORY


@dataclass(frozen=True, slots=True)
class RunEvent:
    source: str
    message: str
    severity: Severity = "error"
    exception: str | None = None
    error: str | None = None
    context: dict[str, Any] = field(default_factory=dict)
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def to_dict(self) -> dict[str, Any]:
        return {key: value for key, value in asdict(self).items() if value not in (None, {})}

    def annotation(self) -> str:
        text = self.message
        if self.exception is not None:
            text = f"{text} ({self.exception}: {self.error})"
        return f"::{self.severity} title={self.source}::{text}"


_HISTORY: deque[RunEvent] = deque(maxlen=_history_limit())


def _debug_level_from_env(raw: str | None) -> tuple[int, int]:
    """Return the logging level and the clamped ``DEBUG`` value."""

    if raw is None or not raw.strip():
        return logging.WARNING, 0
    try:
        debug_value = int(raw.strip())
    except ValueError:
        _LOGGER.warning("Invalid DEBUG value %r; defaulting to WARNING level", raw)
        return logging.WARNING, 0
    debug_value = max(0, min(debug_value, 3))
    return _LEVELS[debug_value], debug_value


def configure_logging(*, force: bool = False) -> None:
    """Configure the root logger from ``DEBUG``; repeated calls are no-ops unless forced."""

    global _CONFIGURED

    if _CONFIGURED and not force:
        return

    level, parsed_debug = _debug_level_from_env(os.getenv("DEBUG"))
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s [%(name)s] %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        stream=sys.stdout,
        force=True,
    )
    # numpy overflow and invalid-value reports arrive through ``warnings``.
    logging.captureWarnings(True)
    logging.getLogger("py.warnings").setLevel(level)
    np.seterr(under="warn" if parsed_debug >= 3 else "ignore")

    _LOGGER.info("Configured logging level %s (DEBUG=%s)", logging.getLevelName(level), parsed_debug)
    _CONFIGURED = True


def record_run_error(
    *,
    source: str,
    message: str,
    exception: Exception | None = None,
    context: Mapping[str, Any] | None = None,
    severity: Severity = "error",
) -> dict[str, Any]:
    """Append an event to the history and annotate GitHub Actions logs."""

    event = RunEvent(
        source=source,
        message=message,
        severity=severity,
        exception=None if exception is None else exception.__class__.__name__,
        error=None if exception is None else str(exception),
        context=dict(context or {}),
    )
    _HISTORY.append(event)

    if os.getenv("GITHUB_ACTIONS") == "true":
        print(event.annotation(), file=sys.stdout, flush=True)
    return event.to_dict()


def recent_errors(limit: int | None = None) -> list[dict[str, Any]]:
    """The most recent events, oldest first."""

    events = list(_HISTORY)
    if limit is not None:
        events = events[-limit:] if limit > 0 else []
    return [event.to_dict() for event in events]


def error_counts() -> dict[str, int]:
    """Number of recorded events per severity."""

    counts = Counter(event.severity for event in _HISTORY)
    return {severity: counts.get(severity, 0) for severity in ("error", "warning")}


def clear_error_history() -> None:
    _HISTORY.clear()
