"""Manufactured-solution verification: closed-form cases, error norms, rate studies.

Every manufactured field is separable, ``scale * a(t) * prod_k g_k(x_k) + offset``,
so first and second space derivatives come from the one-dimensional factors.
Sources are obtained by substituting the closed forms into the continuous
equations with the chain rule; :func:`manufactured_residuals` re-checks them
with high-order finite differences of the field values alone.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Callable, Iterable, Literal, Sequence

import numpy as np

from .config import settings
from .constitutive import (
    PhysParams,
    heat_capacity,
    heat_capacity_slope,
    interfacial_area_from_porosity,
    permeability,
    permeability_derivative,
    reaction_heat,
    reaction_rate_closed,
    thermal_conductivity,
    thermal_conductivity_slope,
)
from .grid import CellField, FaceField, StaggeredGrid, d_face, norm_M, norm_TM
from .stepper import SimState, SourceSpec, StepOptions, TimeControl, march

__all__ = [
    "QUANTITIES",
    "ConvergenceReport",
    "ErrorTracker",
    "HistoryError",
    "ManufacturedCase",
    "MeshErrors",
    "SeparableField",
    "SpaceFactor",
    "TimeFactor",
    "boundary_compatibility",
    "error_norms",
    "example1_case",
    "example2_case",
    "get_case",
    "manufactured_residuals",
    "run_convergence_study",
    "run_mms",
]

logger = logging.getLogger("wormhole_heat.mms")

QUANTITIES = ("phi", "p", "u", "c_f", "T")
H1_QUANTITIES = ("c_f", "T")


class HistoryError(ValueError):
    """Raised when error norms are requested before any step was sampled."""


@dataclass(frozen=True, slots=True)
class SpaceFactor:
    """One-dimensional factor: ``(x(1-x))^n``, ``cos(pi x)``, ``sin(pi x)`` or 1."""

    kind: Literal["bump", "cos", "sin", "one"]
    power: int = 1

    def value(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "bump":
            return (x * (1.0 - x)) ** self.power
        if self.kind == "cos":
            return np.cos(math.pi * x)
        if self.kind == "sin":
            return np.sin(math.pi * x)
        return np.ones_like(x)

    def d1(self, x: np.ndarray) -> np.ndarray:
        n = self.power
        if self.kind == "bump":
            return n * (x * (1.0 - x)) ** (n - 1) * (1.0 - 2.0 * x)
        if self.kind == "cos":
            return -math.pi * np.sin(math.pi * x)
        if self.kind == "sin":
            return math.pi * np.cos(math.pi * x)
        return np.zeros_like(x)

    def d2(self, x: np.ndarray) -> np.ndarray:
        n = self.power
        if self.kind == "bump":
            s = x * (1.0 - x)
            curvature = -2.0 * n * s ** (n - 1)
            if n >= 2:
                curvature = curvature + n * (n - 1) * s ** (n - 2) * (1.0 - 2.0 * x) ** 2
            return curvature
        if self.kind in ("cos", "sin"):
            return -(math.pi**2) * self.value(x)
        return np.zeros_like(x)


@dataclass(frozen=True, slots=True)
class TimeFactor:
    """``t`` or ``e^t - 1``; both vanish at ``t = 0``."""

    kind: Literal["linear", "expm1"] = "linear"

    def value(self, t: float) -> float:
        return t if self.kind == "linear" else math.expm1(t)

    def rate(self, t: float) -> float:
        return 1.0 if self.kind == "linear" else math.exp(t)


@dataclass(frozen=True, slots=True)
class SeparableField:
    scale: float
    time: TimeFactor
    factors: tuple[SpaceFactor, ...]
    offset: float

    def _space(self, xs: Sequence[np.ndarray]) -> np.ndarray:
        return math.prod(f.value(x) for f, x in zip(self.factors, xs))

    def value(self, t: float, *xs: np.ndarray) -> np.ndarray:
        return self.scale * self.time.value(t) * self._space(xs) + self.offset

    def dt(self, t: float, *xs: np.ndarray) -> np.ndarray:
        return self.scale * self.time.rate(t) * self._space(xs)

    def d1(self, t: float, axis: int, *xs: np.ndarray) -> np.ndarray:
        parts = [
            f.d1(x) if k == axis else f.value(x) for k, (f, x) in enumerate(zip(self.factors, xs))
        ]
        return self.scale * self.time.value(t) * math.prod(parts)

    def d2(self, t: float, axis: int, *xs: np.ndarray) -> np.ndarray:
        parts = [
            f.d2(x) if k == axis else f.value(x) for k, (f, x) in enumerate(zip(self.factors, xs))
        ]
        return self.scale * self.time.value(t) * math.prod(parts)


@dataclass(frozen=True, slots=True)
class ManufacturedCase:
    name: str
    dim: int
    pressure: SeparableField
    concentration: SeparableField
    temperature: SeparableField
    porosity: SeparableField
    params: PhysParams = field(default_factory=PhysParams.verification)
    k0: float = 1.0
    clamp_cmax: float = 4.0

    @property
    def phi0(self) -> float:
        """Initial porosity; the time factor vanishes at t = 0."""

        return self.porosity.offset

    def _permeability(self, phi: np.ndarray) -> np.ndarray:
        return permeability(phi, self.phi0, self.k0, guard=False)

    def _reaction(self, t: float, xs: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        """Interfacial area and reaction rate at the exact fields."""

        phi = self.porosity.value(t, *xs)
        area = interfacial_area_from_porosity(phi, self.phi0, self.params.a0)
        rate = reaction_rate_closed(
            self.concentration.value(t, *xs), self.temperature.value(t, *xs), self.params
        )
        return area, rate

    def velocity(self, t: float, axis: int, *xs: np.ndarray) -> np.ndarray:
        phi = self.porosity.value(t, *xs)
        return -self._permeability(phi) / self.params.mu * self.pressure.d1(t, axis, *xs)

    def div_velocity(self, t: float, *xs: np.ndarray) -> np.ndarray:
        phi = self.porosity.value(t, *xs)
        k = self._permeability(phi)
        dk = permeability_derivative(phi, self.phi0, self.k0)
        total = np.zeros_like(phi)
        for axis in range(self.dim):
            total = total + dk * self.porosity.d1(t, axis, *xs) * self.pressure.d1(t, axis, *xs)
            total = total + k * self.pressure.d2(t, axis, *xs)
        return -total / self.params.mu

    def pressure_source(self, t: float, *xs: np.ndarray) -> np.ndarray:
        return (
            self.params.gamma * self.pressure.dt(t, *xs)
            + self.porosity.dt(t, *xs)
            + self.div_velocity(t, *xs)
        )

    def concentration_source(self, t: float, *xs: np.ndarray) -> np.ndarray:
        p = self.params
        phi = self.porosity.value(t, *xs)
        c = self.concentration.value(t, *xs)
        lhs = self.porosity.dt(t, *xs) * c + phi * self.concentration.dt(t, *xs)
        lhs = lhs + self.div_velocity(t, *xs) * c
        for axis in range(self.dim):
            dc = self.concentration.d1(t, axis, *xs)
            lhs = lhs + self.velocity(t, axis, *xs) * dc
            lhs = lhs - p.diffusion_along(axis) * (
                self.porosity.d1(t, axis, *xs) * dc + phi * self.concentration.d2(t, axis, *xs)
            )
        area, rate = self._reaction(t, xs)
        return lhs + area * rate

    def porosity_source(self, t: float, *xs: np.ndarray) -> np.ndarray:
        area, rate = self._reaction(t, xs)
        return self.porosity.dt(t, *xs) - self.params.alpha * rate * area / self.params.rho_s

    def temperature_source(self, t: float, *xs: np.ndarray) -> np.ndarray:
        p = self.params
        phi = self.porosity.value(t, *xs)
        temp = self.temperature.value(t, *xs)
        lhs = heat_capacity_slope(p) * self.porosity.dt(t, *xs) * temp
        lhs = lhs + heat_capacity(phi, p) * self.temperature.dt(t, *xs)
        lhs = lhs + p.rho_f * p.theta_f * self.div_velocity(t, *xs) * temp
        lam = thermal_conductivity(phi, p)
        for axis in range(self.dim):
            dtemp = self.temperature.d1(t, axis, *xs)
            lhs = lhs + p.rho_f * p.theta_f * self.velocity(t, axis, *xs) * dtemp
            lhs = lhs - thermal_conductivity_slope(p) * self.porosity.d1(t, axis, *xs) * dtemp
            lhs = lhs - lam * self.temperature.d2(t, axis, *xs)
        area, rate = self._reaction(t, xs)
        return lhs - area * reaction_heat(temp) * rate

    def grid(self, n: int) -> StaggeredGrid:
        return StaggeredGrid.cube(0.0, 1.0, n, self.dim)

    def sources_on(self, grid: StaggeredGrid) -> SourceSpec:
        coords = grid.cell_coordinates()
        return SourceSpec(
            c_inj=self.params.c_inj,
            pressure=partial(_sampled, self.pressure_source, coords),
            concentration=partial(_sampled, self.concentration_source, coords),
            porosity=partial(_sampled, self.porosity_source, coords),
            temperature=partial(_sampled, self.temperature_source, coords),
        )

    def step_options(self, solver_tol: float | None = None) -> StepOptions:
        return StepOptions(
            clamp_cmax=self.clamp_cmax,
            dominance="raise",
            solver_tol=solver_tol,
            positivity_checks=False,
        )

    def initial_state(self, grid: StaggeredGrid) -> SimState:
        xs = grid.cell_coordinates()
        return SimState.initial(
            grid,
            phi0=self.phi0,
            k0=self.k0,
            pressure=self.pressure.value(0.0, *xs),
            concentration=self.concentration.value(0.0, *xs),
            temperature=self.temperature.value(0.0, *xs),
            porosity=self.porosity.value(0.0, *xs),
        )


def _sampled(
    func: Callable[..., np.ndarray], coords: tuple[np.ndarray, ...], t: float
) -> np.ndarray:
    return func(t, *coords)


def example1_case() -> ManufacturedCase:
    """Two-dimensional case on the unit square."""

    bump2 = SpaceFactor("bump", 2)
    cos = SpaceFactor("cos")
    return ManufacturedCase(
        name="example1",
        dim=2,
        pressure=SeparableField(1.0, TimeFactor("linear"), (bump2, bump2), 1.0),
        concentration=SeparableField(1.0, TimeFactor("linear"), (cos, cos), 1.0),
        temperature=SeparableField(0.5, TimeFactor("linear"), (cos, cos), 10.0),
        porosity=SeparableField(0.25, TimeFactor("linear"), (bump2, SpaceFactor("sin")), 0.25),
    )


def example2_case() -> ManufacturedCase:
    """Three-dimensional case on the unit cube."""

    cos = SpaceFactor("cos")
    return ManufacturedCase(
        name="example2",
        dim=3,
        pressure=SeparableField(1.0, TimeFactor("expm1"), (SpaceFactor("bump", 4), cos, cos), 1.0),
        concentration=SeparableField(
            1.0, TimeFactor("linear"), (SpaceFactor("bump", 3), cos, cos), 1.0
        ),
        temperature=SeparableField(0.5, TimeFactor("expm1"), (cos, cos, cos), 10.0),
        porosity=SeparableField(0.25, TimeFactor("expm1"), (cos, SpaceFactor("sin"), cos), 0.5),
    )


_CASES: dict[str, Callable[[], ManufacturedCase]] = {
    "example1": example1_case,
    "example2": example2_case,
}


def get_case(name: str) -> ManufacturedCase:
    try:
        return _CASES[name]()
    except KeyError:
        raise ValueError(f"Unknown manufactured case {name!r}; choose from {sorted(_CASES)}") from None


class ErrorTracker:
    """Running maxima over steps of the discrete error norms."""

    def __init__(self, case: ManufacturedCase, grid: StaggeredGrid) -> None:
        self.case = case
        self.grid = grid
        self.samples = 0
        self._cells = grid.cell_coordinates()
        self._faces = [grid.face_coordinates(axis) for axis in range(grid.dim)]
        self._maxima = dict.fromkeys(QUANTITIES, 0.0)
        self._h1 = dict.fromkeys(H1_QUANTITIES, 0.0)
        self._last_time = 0.0

    def _cell_error(self, numeric: CellField, exact: SeparableField, t: float) -> CellField:
        return CellField(self.grid, numeric.values - exact.value(t, *self._cells))

    def update(self, state: SimState) -> None:
        t = state.time
        case = self.case
        errors = {
            "phi": self._cell_error(state.porosity, case.porosity, t),
            "p": self._cell_error(state.pressure, case.pressure, t),
            "c_f": self._cell_error(state.concentration, case.concentration, t),
            "T": self._cell_error(state.temperature, case.temperature, t),
        }
        for key, err in errors.items():
            self._maxima[key] = max(self._maxima[key], norm_M(err))

        velocity_error = FaceField(
            self.grid,
            tuple(
                state.velocity.component(axis) - case.velocity(t, axis, *self._faces[axis])
                for axis in range(self.grid.dim)
            ),
        )
        self._maxima["u"] = max(self._maxima["u"], norm_TM(velocity_error))

        dt = t - self._last_time
        for key in H1_QUANTITIES:
            err = errors[key]
            seminorm_sq = sum(
                norm_TM(d_face(err, axis)) ** 2 for axis in range(self.grid.dim)
            )
            self._h1[key] += dt * seminorm_sq
        self._last_time = t
        self.samples += 1

    def norms(self) -> dict[str, float]:
        if not self.samples:
            raise HistoryError("No time steps were sampled; run at least one step first")
        return dict(self._maxima)

    def h1_norms(self) -> dict[str, float]:
        if not self.samples:
            raise HistoryError("No time steps were sampled; run at least one step first")
        return {key: math.sqrt(value) for key, value in self._h1.items()}


def error_norms(states: Iterable[SimState], case: ManufacturedCase) -> dict[str, float]:
    """l-infinity-in-time errors of a sequence of states (steps n >= 1)."""

    tracker: ErrorTracker | None = None
    for state in states:
        if tracker is None:
            tracker = ErrorTracker(case, state.grid)
        tracker.update(state)
    if tracker is None:
        raise HistoryError("No states were supplied")
    return tracker.norms()


@dataclass(slots=True)
class MeshErrors:
    n: int
    h: float
    steps: int
    errors: dict[str, float]
    h1: dict[str, float]
    seconds: float = 0.0

    def to_dict(self) -> dict[str, object]:
        return asdict(self)


def run_mms(case: ManufacturedCase, n: int, *, solver_tol: float | None = None) -> MeshErrors:
    """Simulate ``case`` on an ``n``-per-axis grid with ``dt = h^2`` up to ``t = 1``."""

    grid = case.grid(n)
    h = grid.spacing[0]
    control = TimeControl(h * h, 1.0)
    state = case.initial_state(grid)
    tracker = ErrorTracker(case, grid)

    started = time.perf_counter()
    logger.info("MMS %s: n=%d, %d steps", case.name, n, control.steps)
    for state in march(
        state, control, case.params, case.sources_on(grid), None, case.step_options(solver_tol)
    ):
        tracker.update(state)
    elapsed = time.perf_counter() - started
    logger.info("MMS %s: n=%d finished in %.1fs", case.name, n, elapsed)

    return MeshErrors(n, h, control.steps, tracker.norms(), tracker.h1_norms(), elapsed)


@dataclass(slots=True)
class ConvergenceReport:
    case: str
    rows: list[MeshErrors]

    @property
    def meshes(self) -> list[int]:
        return [row.n for row in self.rows]

    def rates(self) -> dict[str, list[float | None]]:
        """log2 error ratios of consecutive meshes; ``None`` unless h halves."""

        rates: dict[str, list[float | None]] = {key: [] for key in QUANTITIES}
        for coarse, fine in zip(self.rows, self.rows[1:]):
            halved = math.isclose(coarse.h / fine.h, 2.0, rel_tol=1e-12)
            for key in QUANTITIES:
                e_coarse, e_fine = coarse.errors[key], fine.errors[key]
                if halved and e_coarse > 0 and e_fine > 0:
                    rates[key].append(math.log2(e_coarse / e_fine))
                else:
                    rates[key].append(None)
        return rates

    def _table(self) -> list[list[str]]:
        rates = self.rates()
        header = ["h"]
        for key in QUANTITIES:
            header += [f"E_{key}", f"rate_{key}"]
        header += [f"H1_{key}" for key in H1_QUANTITIES]
        body = [header]
        for index, row in enumerate(self.rows):
            line = [f"1/{row.n}"]
            for key in QUANTITIES:
                rate = rates[key][index - 1] if index else None
                line += [f"{row.errors[key]:.2E}", "---" if rate is None else f"{rate:.2f}"]
            line += [f"{row.h1[key]:.2E}" for key in H1_QUANTITIES]
            body.append(line)
        return body

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        for line in self._table():
            writer.writerow(["" if cell == "---" else cell for cell in line])
        return buffer.getvalue()

    def to_text(self) -> str:
        table = self._table()
        widths = [max(len(line[col]) for line in table) for col in range(len(table[0]))]
        lines = ["  ".join(cell.rjust(width) for cell, width in zip(line, widths)) for line in table]
        return f"Errors and convergence rates for {self.case}\n" + "\n".join(lines) + "\n"

    def to_dict(self) -> dict[str, object]:
        return {"case": self.case, "rows": [row.to_dict() for row in self.rows], "rates": self.rates()}


def run_convergence_study(
    case: ManufacturedCase | str,
    meshes: Sequence[int],
    params: PhysParams | None = None,
    *,
    workers: int | None = None,
    solver_tol: float | None = None,
) -> ConvergenceReport:
    """Run ``case`` on every mesh (cells per axis) and collect errors and rates."""

    if isinstance(case, str):
        case = get_case(case)
    if params is not None:
        case = ManufacturedCase(
            case.name, case.dim, case.pressure, case.concentration, case.temperature,
            case.porosity, params, case.k0, case.clamp_cmax,
        )
    meshes = [int(n) for n in meshes]
    if not meshes:
        raise ValueError("At least one mesh is required")
    if any(n < 2 for n in meshes) or any(b <= a for a, b in zip(meshes, meshes[1:])):
        raise ValueError(f"Meshes must be increasing cell counts >= 2, got {meshes}")

    workers = settings.convergence_workers if workers is None else workers
    run = partial(run_mms, case, solver_tol=solver_tol)
    if workers > 1 and len(meshes) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(meshes))) as pool:
            rows = list(pool.map(run, meshes))
    else:
        rows = [run(n) for n in meshes]
    return ConvergenceReport(case.name, rows)


# Central sixth-order stencils (offsets -3..3).
_D1 = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0
_OFFSETS = np.arange(-3, 4)


def manufactured_residuals(
    case: ManufacturedCase,
    *,
    samples: int | None = None,
    t: float = 0.5,
    step: float = 5e-3,
) -> dict[str, float]:
    """Max-norm residual of each continuous equation with the derived sources.

    Derivatives of the closed-form values are approximated with sixth-order
    central differences on a ``samples``-per-axis grid of sample points.
    """

    samples = samples or (160 if case.dim == 2 else 32)
    xs = case.grid(samples).cell_coordinates()
    p = case.params
    phi = case.porosity
    c = case.concentration
    temp = case.temperature
    pres = case.pressure

    def at(fld: SeparableField, tt: float, pts: Sequence[np.ndarray]) -> np.ndarray:
        return fld.value(tt, *pts)

    def shifted(pts: Sequence[np.ndarray], axis: int, delta: np.ndarray | float) -> list[np.ndarray]:
        out = list(pts)
        out[axis] = pts[axis] + delta
        return out

    def d_space(func: Callable[[Sequence[np.ndarray]], np.ndarray], pts, axis: int) -> np.ndarray:
        return sum(w * func(shifted(pts, axis, k * step)) for w, k in zip(_D1, _OFFSETS) if w) / step

    def d_time(func: Callable[[float], np.ndarray]) -> np.ndarray:
        return sum(w * func(t + k * step) for w, k in zip(_D1, _OFFSETS) if w) / step

    def darcy(pts, axis: int) -> np.ndarray:
        k = permeability(at(phi, t, pts), case.phi0, case.k0, guard=False)
        return -k / p.mu * d_space(lambda q: at(pres, t, q), pts, axis)

    def reaction(pts) -> tuple[np.ndarray, np.ndarray]:
        area = interfacial_area_from_porosity(at(phi, t, pts), case.phi0, p.a0)
        return area, reaction_rate_closed(at(c, t, pts), at(temp, t, pts), p)

    area, rate = reaction(xs)
    div_u = sum(d_space(lambda q, a=a: darcy(q, a), xs, a) for a in range(case.dim))

    pressure_res = (
        p.gamma * d_time(lambda tt: at(pres, tt, xs))
        + d_time(lambda tt: at(phi, tt, xs))
        + div_u
        - case.pressure_source(t, *xs)
    )

    def acid_flux(pts, axis: int) -> np.ndarray:
        return darcy(pts, axis) * at(c, t, pts) - at(phi, t, pts) * p.diffusion_along(axis) * d_space(
            lambda q: at(c, t, q), pts, axis
        )

    conc_res = (
        d_time(lambda tt: at(phi, tt, xs) * at(c, tt, xs))
        + sum(d_space(lambda q, a=a: acid_flux(q, a), xs, a) for a in range(case.dim))
        + area * rate
        - case.concentration_source(t, *xs)
    )

    porosity_res = (
        d_time(lambda tt: at(phi, tt, xs))
        - p.alpha * rate * area / p.rho_s
        - case.porosity_source(t, *xs)
    )

    def heat_flux(pts, axis: int) -> np.ndarray:
        lam = thermal_conductivity(at(phi, t, pts), p)
        return p.rho_f * p.theta_f * darcy(pts, axis) * at(temp, t, pts) - lam * d_space(
            lambda q: at(temp, t, q), pts, axis
        )

    temp_res = (
        d_time(lambda tt: heat_capacity(at(phi, tt, xs), p) * at(temp, tt, xs))
        + sum(d_space(lambda q, a=a: heat_flux(q, a), xs, a) for a in range(case.dim))
        - area * reaction_heat(at(temp, t, xs)) * rate
        - case.temperature_source(t, *xs)
    )

    return {
        "pressure": float(np.max(np.abs(pressure_res))),
        "concentration": float(np.max(np.abs(conc_res))),
        "porosity": float(np.max(np.abs(porosity_res))),
        "temperature": float(np.max(np.abs(temp_res))),
    }


def boundary_compatibility(case: ManufacturedCase, *, samples: int = 64, t: float = 1.0) -> float:
    """Largest ``|u.n|``, ``|dc/dn|`` or ``|dT/dn|`` over sampled boundary points."""

    worst = 0.0
    grid = case.grid(samples)
    for axis in range(case.dim):
        for edge in (0.0, 1.0):
            pts = list(grid.face_coordinates(axis))
            index: list[slice | int] = [slice(None)] * case.dim
            index[axis] = 0 if edge == 0.0 else -1
            pts = [np.asarray(x[tuple(index)]) for x in pts]
            pts[axis] = np.full_like(pts[axis], edge)
            for values in (
                case.velocity(t, axis, *pts),
                case.concentration.d1(t, axis, *pts),
                case.temperature.d1(t, axis, *pts),
            ):
                worst = max(worst, float(np.max(np.abs(values))))
    return worst
