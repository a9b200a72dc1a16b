"""Dissolution scenarios: TOML configuration, built-in presets and the run driver."""

from __future__ import annotations

import copy
import csv
import json
import logging
import sys
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 backport
    import tomli as tomllib
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .config import settings
from .constitutive import (
    DEFAULT_PERMEABILITY_EPS,
    PhysParams,
    permeability_clip_count,
    reset_permeability_clips,
)
from .grid import CellField, GridError, StaggeredGrid, total
from .logging_utils import error_counts, record_run_error
from .output import FORMATS, SnapshotSet, write_snapshot
from .stepper import (
    SIDE_NAMES,
    BoundarySpec,
    FixedValue,
    InvariantViolation,
    SimState,
    SourceSpec,
    StepOptions,
    TimeControl,
    march,
)

__all__ = [
    "ConfigError",
    "RunSummary",
    "ScenarioConfig",
    "Simulation",
    "average_porosity",
    "build_simulation",
    "builtin_scenarios",
    "load_scenario",
    "parse_config",
    "run_scenario",
    "snapshot_steps",
    "to_toml",
]

logger = logging.getLogger("wormhole_heat.scenarios")


class ConfigError(ValueError):
    """Raised for unreadable or invalid scenario files."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridSpec(_Section):
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]

    @model_validator(mode="after")
    def _check(self) -> "GridSpec":
        try:
            self.to_grid()
        except GridError as exc:
            raise ValueError(str(exc)) from exc
        return self

    def to_grid(self) -> StaggeredGrid:
        return StaggeredGrid(self.lower, self.upper, self.cells)


class TimeSpec(_Section):
    dt: float = Field(gt=0)
    final_time: float = Field(gt=0)

    @model_validator(mode="after")
    def _check(self) -> "TimeSpec":
        self.to_control()
        return self

    def to_control(self) -> TimeControl:
        return TimeControl(self.dt, self.final_time)


class Seed(_Section):
    at: tuple[float, ...]
    phi0: float = Field(gt=0, lt=1)
    k0: float = Field(gt=0)


class MediumSpec(_Section):
    phi0: float = Field(default=0.2, gt=0, lt=1)
    k0: float = Field(default=1e-8, gt=0)
    seeds: tuple[Seed, ...] = ()


class InitialSpec(_Section):
    pressure: float = 1.52e5
    concentration: float = Field(default=0.0, ge=0)
    temperature: float = Field(default=298.0, gt=0)


class Well(_Section):
    x: float
    rate: float


class SourcesSpec(_Section):
    injection: Well | None = None
    production: Well | None = None

    @model_validator(mode="after")
    def _check(self) -> "SourcesSpec":
        if self.injection is not None and not self.injection.rate > 0:
            raise ValueError("injection rate must be positive")
        if self.production is not None and not self.production.rate < 0:
            raise ValueError("production rate must be negative")
        return self


class BoundaryTable(_Section):
    temperature: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> "BoundaryTable":
        unknown = sorted(set(self.temperature) - set(SIDE_NAMES))
        if unknown:
            raise ValueError(f"unknown sides {unknown}; expected a subset of {list(SIDE_NAMES)}")
        return self


class NumericsSpec(_Section):
    clamp_cmax: float = Field(default=1.0, gt=0)
    permeability_eps: float = Field(default=DEFAULT_PERMEABILITY_EPS, gt=0, lt=0.5)
    dominance: Literal["raise", "warn"] | None = None
    solver_tol: float | None = Field(default=None, gt=0, lt=1)


class OutputSpec(_Section):
    snapshots: int = Field(default=10, ge=0)
    formats: tuple[Literal["csv", "vtk"], ...] | None = None
    directory: str | None = None


class ScenarioConfig(_Section):
    name: str = "scenario"
    description: str = ""
    grid: GridSpec
    time: TimeSpec
    physics: PhysParams = Field(default_factory=PhysParams.realistic)
    medium: MediumSpec = Field(default_factory=MediumSpec)
    initial: InitialSpec = Field(default_factory=InitialSpec)
    sources: SourcesSpec = Field(default_factory=SourcesSpec)
    boundary: BoundaryTable = Field(default_factory=BoundaryTable)
    numerics: NumericsSpec = Field(default_factory=NumericsSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)

    @model_validator(mode="after")
    def _check_geometry(self) -> "ScenarioConfig":
        grid = self.grid.to_grid()
        try:
            for seed in self.medium.seeds:
                grid.cell_index(seed.at)
            for well in (self.sources.injection, self.sources.production):
                if well is not None:
                    grid.column_index(0, well.x)
        except GridError as exc:
            raise ValueError(str(exc)) from exc
        ceiling = 1.0 - self.numerics.permeability_eps
        porosities = [self.medium.phi0, *(seed.phi0 for seed in self.medium.seeds)]
        if max(porosities) >= ceiling:
            raise ValueError(f"initial porosity must stay below 1 - permeability_eps = {ceiling!r}")
        axes = {name.split("_")[0] for name in self.boundary.temperature}
        if any(axis not in ("x", "y", "z")[: grid.dim] for axis in axes):
            raise ValueError(f"boundary sides {sorted(axes)} exceed a {grid.dim}-D grid")
        return self


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "<root>"
        parts.append(f"{location}: {error['msg']}")
    return "; ".join(parts)


def _deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def parse_config(text: str) -> ScenarioConfig:
    """Parse TOML scenario text; ``preset = "<name>"`` starts from a built-in scenario."""

    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"Invalid scenario TOML: {exc}") from exc

    preset = data.pop("preset", None)
    if preset is not None:
        presets = builtin_scenarios()
        if preset not in presets:
            raise ConfigError(f"preset: unknown scenario {preset!r}; choose from {sorted(presets)}")
        data = _deep_merge(presets[preset].model_dump(mode="json"), data)

    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"Invalid scenario: {_format_validation_error(exc)}") from exc


def to_toml(config: ScenarioConfig) -> str:
    """Serialise ``config`` so that ``parse_config(to_toml(config)) == config``."""

    return tomli_w.dumps(config.model_dump(mode="json", exclude_none=True))


def _realistic_2d(
    name: str,
    description: str,
    *,
    dt: float,
    final_time: float,
    rate: float,
    boundary: dict[str, float] | None = None,
) -> ScenarioConfig:
    return ScenarioConfig(
        name=name,
        description=description,
        grid=GridSpec(lower=(0.0, 0.0), upper=(0.2, 0.2), cells=(80, 80)),
        time=TimeSpec(dt=dt, final_time=final_time),
        medium=MediumSpec(
            phi0=0.2,
            k0=1e-8,
            seeds=(
                Seed(at=(1.25e-3, 1.0125e-1), phi0=0.5, k0=1e-7),
                Seed(at=(1.25e-3, 5.125e-2), phi0=0.6, k0=1e-6),
            ),
        ),
        sources=SourcesSpec(
            injection=Well(x=1.25e-3, rate=rate), production=Well(x=1.9875e-1, rate=-rate)
        ),
        boundary=BoundaryTable(temperature=boundary or {}),
        numerics=NumericsSpec(clamp_cmax=1e3, permeability_eps=1e-2, dominance="warn"),
    )


def builtin_scenarios() -> dict[str, ScenarioConfig]:
    """The three dissolution presets keyed by name."""

    example3 = _realistic_2d(
        "example3",
        "2-D dissolution with no-flux temperature boundaries",
        dt=1e5,
        final_time=1e7,
        rate=1e-4,
    )
    example4 = _realistic_2d(
        "example4",
        "2-D dissolution with the left side held at 298 K",
        dt=1e4,
        final_time=1e6,
        rate=5e-4,
        boundary={"x_lo": 298.0},
    )
    example5 = ScenarioConfig(
        name="example5",
        description="3-D dissolution with no-flux temperature boundaries",
        grid=GridSpec(lower=(0.0, 0.0, 0.0), upper=(0.2, 0.2, 0.2), cells=(40, 40, 40)),
        time=TimeSpec(dt=1e4, final_time=1e6),
        medium=MediumSpec(
            phi0=0.2,
            k0=1e-8,
            seeds=(
                Seed(at=(2.5e-3, 1.025e-1, 1.025e-1), phi0=0.5, k0=1e-7),
                Seed(at=(2.5e-3, 5.25e-2, 5.25e-2), phi0=0.6, k0=1e-6),
            ),
        ),
        sources=SourcesSpec(
            injection=Well(x=2.5e-3, rate=1e-4), production=Well(x=1.975e-1, rate=-1e-4)
        ),
        numerics=NumericsSpec(clamp_cmax=1e3, permeability_eps=1e-2, dominance="warn"),
    )
    return {cfg.name: cfg for cfg in (example3, example4, example5)}


def load_scenario(source: str | Path) -> ScenarioConfig:
    """Resolve a preset name or read a TOML scenario file."""

    presets = builtin_scenarios()
    if isinstance(source, str) and source in presets:
        return presets[source]
    path = Path(source)
    if not path.is_file():
        raise ConfigError(
            f"{source!s} is neither a preset ({', '.join(sorted(presets))}) nor a readable file"
        )
    return parse_config(path.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class Simulation:
    config: ScenarioConfig
    grid: StaggeredGrid
    state: SimState
    control: TimeControl
    sources: SourceSpec
    boundary: BoundarySpec
    options: StepOptions
    seed_cells: tuple[tuple[int, ...], ...]


def _column(grid: StaggeredGrid, x: float, rate: float) -> np.ndarray:
    values = np.zeros(grid.shape)
    index: list[slice | int] = [slice(None)] * grid.dim
    index[0] = grid.column_index(0, x)
    values[tuple(index)] = rate
    return values


def build_simulation(config: ScenarioConfig) -> Simulation:
    """Sample the initial fields of ``config`` and wire sources and options."""

    grid = config.grid.to_grid()
    phi0 = np.full(grid.shape, config.medium.phi0)
    k0 = np.full(grid.shape, config.medium.k0)
    seed_cells = []
    for seed in config.medium.seeds:
        cell = grid.cell_index(seed.at)
        phi0[cell] = seed.phi0
        k0[cell] = seed.k0
        seed_cells.append(cell)

    state = SimState.initial(
        grid,
        phi0=phi0,
        k0=k0,
        pressure=config.initial.pressure,
        concentration=config.initial.concentration,
        temperature=config.initial.temperature,
    )
    src = config.sources
    sources = SourceSpec(
        injection=None if src.injection is None else _column(grid, src.injection.x, src.injection.rate),
        production=None
        if src.production is None
        else _column(grid, src.production.x, src.production.rate),
        c_inj=config.physics.c_inj,
    )
    boundary = BoundarySpec(
        {side: FixedValue(value) for side, value in config.boundary.temperature.items()}
    )
    numerics = config.numerics
    options = StepOptions(
        clamp_cmax=numerics.clamp_cmax,
        permeability_eps=numerics.permeability_eps,
        porosity_floor=float(phi0.min()),
        dominance=numerics.dominance,
        solver_tol=numerics.solver_tol,
    )
    return Simulation(
        config, grid, state, config.time.to_control(), sources, boundary, options, tuple(seed_cells)
    )


def average_porosity(porosity: CellField) -> float:
    """Volume-weighted mean porosity ``(Psi, 1)_M / |Omega|``."""

    return total(porosity) / porosity.grid.measure


def snapshot_steps(steps: int, count: int) -> list[int]:
    """``count`` evenly spaced steps ``round(k N / count)``, k = 1..count."""

    if count <= 0:
        return []
    return sorted({round(k * steps / count) for k in range(1, count + 1)})


@dataclass(slots=True)
class RunSummary:
    scenario: str
    steps: int
    final_time: float
    wall_seconds: float
    solver_iterations: dict[str, int]
    dominance_warnings: int
    permeability_clips: int
    average_porosity: list[float]
    seed_porosity: list[float]
    background_porosity: float
    snapshots: list[str] = field(default_factory=list)
    output_dir: str = ""
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def initial_average_porosity(self) -> float:
        return self.average_porosity[0]

    @property
    def final_average_porosity(self) -> float:
        return self.average_porosity[-1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "steps": self.steps,
            "final_time": self.final_time,
            "wall_seconds": self.wall_seconds,
            "solver_iterations": self.solver_iterations,
            "dominance_warnings": self.dominance_warnings,
            "permeability_clips": self.permeability_clips,
            "initial_average_porosity": self.initial_average_porosity,
            "final_average_porosity": self.final_average_porosity,
            "seed_porosity": self.seed_porosity,
            "background_porosity": self.background_porosity,
            "snapshots": self.snapshots,
            "output_dir": self.output_dir,
            "settings": settings.describe(),
            "recent_events": error_counts(),
            "config": self.config,
        }


def _background_mean(porosity: np.ndarray, seed_cells: tuple[tuple[int, ...], ...]) -> float:
    mask = np.ones(porosity.shape, dtype=bool)
    for cell in seed_cells:
        mask[cell] = False
    return float(porosity[mask].mean())


def run_scenario(
    config: ScenarioConfig,
    *,
    output_dir: Path | None = None,
    snapshots: int | None = None,
    formats: tuple[str, ...] | None = None,
    max_steps: int | None = None,
) -> RunSummary:
    """Run ``config`` to its final time, writing snapshots and diagnostics.

    Snapshots are handed to a writer thread while the next steps compute.
    ``max_steps`` truncates the run (used for smoke runs).
    """

    sim = build_simulation(config)
    directory = Path(output_dir or config.output.directory or settings.output_dir / config.name)
    formats = tuple(formats or config.output.formats or settings.snapshot_formats)
    unknown = sorted(set(formats) - set(FORMATS))
    if unknown:
        raise ConfigError(f"Unknown snapshot formats {unknown}; choose from {list(FORMATS)}")
    count = config.output.snapshots if snapshots is None else snapshots
    total_steps = sim.control.steps if max_steps is None else min(max_steps, sim.control.steps)
    wanted = set(snapshot_steps(total_steps, count))
    check = sim.options.invariants_enabled

    directory.mkdir(parents=True, exist_ok=True)
    reset_permeability_clips()
    iterations = {"pressure": 0, "concentration": 0, "temperature": 0}
    dominance = 0
    history = [(0, 0.0, average_porosity(sim.state.porosity))]
    pending: list[Future[Path]] = []

    logger.info("Running %s: %d steps on grid %s", config.name, total_steps, sim.grid.shape)
    started = time.perf_counter()
    state = sim.state
    with ThreadPoolExecutor(max_workers=1, thread_name_prefix="snapshot") as writer:

        def _emit(current: SimState) -> None:
            snap = SnapshotSet.from_state(current, config.name)
            for fmt in formats:
                pending.append(writer.submit(write_snapshot, snap, directory, fmt))

        if count:
            _emit(state)
        try:
            for state in march(
                state, sim.control, config.physics, sim.sources, sim.boundary, sim.options
            ):
                for stage, report in zip(iterations, state.reports):
                    iterations[stage] += report.iterations
                    dominance += report.dominance_violations
                avg = average_porosity(state.porosity)
                if check and avg < history[-1][2]:
                    raise InvariantViolation(
                        f"average porosity decreased at step {state.step}: {avg!r} < {history[-1][2]!r}"
                    )
                history.append((state.step, state.time, avg))
                if state.step in wanted:
                    _emit(state)
                if state.step >= total_steps:
                    break
        except Exception as exc:
            record_run_error(
                source="scenarios",
                message=f"{config.name} failed at step {state.step + 1}",
                exception=exc,
            )
            raise
        written = [str(future.result()) for future in pending]
    elapsed = time.perf_counter() - started

    with (directory / "porosity_history.csv").open("w", encoding="utf-8", newline="") as handle:
        table = csv.writer(handle, lineterminator="\n")
        table.writerow(["step", "time", "average_porosity"])
        table.writerows((step, repr(t), repr(avg)) for step, t, avg in history)
    (directory / "scenario.toml").write_text(to_toml(config), encoding="utf-8")

    final = state.porosity.values
    summary = RunSummary(
        scenario=config.name,
        steps=state.step,
        final_time=state.time,
        wall_seconds=elapsed,
        solver_iterations=iterations,
        dominance_warnings=dominance,
        permeability_clips=permeability_clip_count(),
        average_porosity=[avg for _, _, avg in history],
        seed_porosity=[float(final[cell]) for cell in sim.seed_cells],
        background_porosity=_background_mean(final, sim.seed_cells),
        snapshots=written,
        output_dir=str(directory),
        config=config.model_dump(mode="json", exclude_none=True),
    )
    (directory / "summary.json").write_text(
        json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    logger.info(
        "%s finished %d steps in %.1fs; average porosity %.6f -> %.6f",
        config.name,
        summary.steps,
        elapsed,
        summary.initial_average_porosity,
        summary.final_average_porosity,
    )
    return summary
