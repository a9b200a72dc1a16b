"""Centralised runtime configuration for the wormhole simulator.

Numerical tuning that is not part of a scenario (solver tolerance, dense-path
cutoff, dominance policy, output location) is sourced from environment
variables so batch jobs can adjust it without editing scenario files.  Every
consumer goes through :data:`settings` to avoid duplicated parsing logic.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .env import ensure_dotenv


LOGGER = logging.getLogger(__name__)

ENV_PREFIX = "WORMHOLE_"

ensure_dotenv()


DEFAULT_OUTPUT_DIR = "output"
DEFAULT_SOLVER_TOL = 1e-10
DEFAULT_MAX_ITER_FACTOR = 10
DEFAULT_DENSE_CUTOFF = 256
SNAPSHOT_FORMATS = ("csv", "vtk")

DominancePolicy = Literal["raise", "warn"]


def _env(key: str, default: str | None = None) -> str | None:
    """Read ``WORMHOLE_<key>`` with a bare ``<key>`` fallback.

    Empty strings are treated the same as an unset variable.
    """

    value = os.getenv(f"{ENV_PREFIX}{key}")
    if value is None or value.strip() == "":
        value = os.getenv(key)

    if value is None or value.strip() == "":
        return default

    return value


def _log_default(key: str, default: str, reason: str) -> None:
    LOGGER.warning(
        "%s is not usable (%s); falling back to default %r.",
        key,
        reason,
        default,
    )


def _env_int_or_default(key: str, default: int) -> int:
    value = _env(key)
    if value is None:
        return default

    try:
        return int(value)
    except ValueError:
        _log_default(key, str(default), f"invalid integer value {value!r}")
        return default


def _env_float_or_default(key: str, default: float) -> float:
    value = _env(key)
    if value is None:
        return default

    try:
        return float(value)
    except ValueError:
        _log_default(key, str(default), f"invalid float value {value!r}")
        return default


def _env_bool(key: str, default: bool = False) -> bool:
    value = _env(key)
    if value is None:
        return default

    candidate = value.strip().lower()
    if candidate in {"1", "true", "yes", "on"}:
        return True
    if candidate in {"0", "false", "no", "off"}:
        return False

    _log_default(key, str(default), f"invalid boolean value {value!r}")
    return default


def _split_csv(value: str | None, fallback: tuple[str, ...]) -> list[str]:
    if not value:
        return list(fallback)
    return [item.strip().lower() for item in value.split(",") if item.strip()]


class Settings(BaseModel):
    model_config = ConfigDict(extra="ignore", validate_default=True)

    output_dir: Path = Field(
        default_factory=lambda: Path(_env("OUTPUT_DIR", DEFAULT_OUTPUT_DIR))
    )
    solver_tol: float = Field(
        default_factory=lambda: _env_float_or_default("SOLVER_TOL", DEFAULT_SOLVER_TOL),
        gt=0,
        lt=1,
    )
    max_iter_factor: int = Field(
        default_factory=lambda: _env_int_or_default(
            "SOLVER_MAX_ITER_FACTOR", DEFAULT_MAX_ITER_FACTOR
        ),
        ge=1,
    )
    dense_cutoff: int = Field(
        default_factory=lambda: _env_int_or_default("DENSE_CUTOFF", DEFAULT_DENSE_CUTOFF),
        ge=0,
        le=4096,
    )
    dominance_policy: DominancePolicy = Field(
        default_factory=lambda: (_env("DOMINANCE_POLICY", "raise") or "raise").strip().lower()
    )
    check_invariants: bool = Field(
        default_factory=lambda: _env_bool("CHECK_INVARIANTS", default=True)
    )
    convergence_workers: int = Field(
        default_factory=lambda: _env_int_or_default("CONVERGENCE_WORKERS", 1),
        ge=1,
    )
    snapshot_formats: list[str] = Field(
        default_factory=lambda: _split_csv(_env("SNAPSHOT_FORMATS"), SNAPSHOT_FORMATS)
    )

    @field_validator("snapshot_formats")
    @classmethod
    def _validate_formats(cls, value: list[str]) -> list[str]:
        unknown = sorted(set(value) - set(SNAPSHOT_FORMATS))
        if unknown:
            raise ValueError(
                f"SNAPSHOT_FORMATS entries must be among {', '.join(SNAPSHOT_FORMATS)}; got {unknown}"
            )
        return value

    def max_iterations(self, unknowns: int) -> int:
        """Iteration cap for a Krylov solve with ``unknowns`` cells."""

        return max(1, self.max_iter_factor * unknowns)

    def reload_from_environment(self) -> None:
        """Refresh configuration from environment variables."""

        refreshed = type(self)()

        for key, value in refreshed.model_dump().items():
            object.__setattr__(self, key, value)

    def describe(self) -> dict[str, Any]:
        """Return a JSON-ready view for run summaries."""

        data = self.model_dump(mode="json")
        data["output_dir"] = str(self.output_dir)
        return data


try:
    settings = Settings()
except ValidationError as exc:  # pragma: no cover - startup configuration must succeed
    logging.basicConfig(level=logging.ERROR)
    LOGGER.error("Critical configuration validation failed: %s", exc)
    raise
