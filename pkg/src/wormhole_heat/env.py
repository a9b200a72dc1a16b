"""Project-wide environment loading helpers.

Runtime settings (output directory, solver tolerances, dominance policy) are read
from environment variables.  Operators can keep them in a ``.env`` file at the
repository root or point ``WORMHOLE_ENV_FILE`` at another file.  Unlike the
explicit override, the repository file is optional: a bare checkout runs with
built-in defaults.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

from dotenv import load_dotenv

__all__ = ["ensure_dotenv"]

logger = logging.getLogger("wormhole_heat.env")

_DOTENV_LOADED = False


def _explicit_path() -> Path | None:
    override = os.environ.get("WORMHOLE_ENV_FILE", "").strip()
    if not override:
        return None
    return Path(override).expanduser()


def _candidate_paths() -> list[Path]:
    """Return possible locations for the simulator ``.env`` file."""

    candidates: list[Path] = []
    explicit = _explicit_path()
    if explicit is not None:
        candidates.append(explicit)

    project_root = Path(__file__).resolve().parent.parent.parent
    candidates.append(project_root / ".env")

    return candidates


def ensure_dotenv() -> Path | None:
    """Load the environment file exactly once and return its path.

    A missing ``WORMHOLE_ENV_FILE`` target aborts with ``FileNotFoundError`` so a
    typo in the override never silently falls back to defaults.
    """

    global _DOTENV_LOADED

    if _DOTENV_LOADED:
        return None

    explicit = _explicit_path()
    if explicit is not None and not explicit.exists():
        message = (
            f"WORMHOLE_ENV_FILE points at {explicit}, which does not exist. "
            "Unset the variable to use built-in defaults or fix the path."
        )
        logger.critical(message)
        raise FileNotFoundError(message)

    existing_path = next((path for path in _candidate_paths() if path.exists()), None)
    _DOTENV_LOADED = True

    if existing_path is None:
        logger.debug("No .env file found; using process environment only")
        return None

    loaded = load_dotenv(existing_path, override=False)
    if not loaded:
        logger.warning(
            "Environment file %s defined no variables; ensure it uses KEY=VALUE pairs.",
            existing_path,
        )
    else:
        logger.debug("Loaded environment variables from %s", existing_path)
    return existing_path
