"""The decoupled four-stage time step.

Each step runs, in order: the explicit porosity update, the implicit pressure
solve with velocity reconstruction, the implicit concentration solve and the
implicit temperature solve.  Every stage reads only values that are already
final for the step (stage three uses the old temperature, stage four the new
concentration); there is no fixed-point iteration.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Literal, Mapping

import numpy as np
from numpy.typing import ArrayLike

from .config import settings
from .constitutive import (
    DEFAULT_PERMEABILITY_EPS,
    MediumFields,
    PhysParams,
    clamp_conc,
    heat_capacity,
    interfacial_area_from_porosity,
    permeability,
    reaction_fraction,
    reaction_heat,
    reaction_rate_closed,
    thermal_conductivity,
)
from .grid import (
    AXIS_NAMES,
    CellField,
    FaceField,
    FieldRole,
    StaggeredGrid,
    d_face,
    interp_face,
    total,
)
from .linsolve import SolveReport, assemble, solve_increment

__all__ = [
    "SIDE_NAMES",
    "BoundarySpec",
    "FixedValue",
    "InvalidMediumError",
    "InvariantViolation",
    "NoFlux",
    "SimState",
    "SourceSpec",
    "StepOptions",
    "TimeControl",
    "advance",
    "concentration_step",
    "march",
    "porosity_step",
    "pressure_balance_defect",
    "pressure_velocity_step",
    "temperature_step",
]

logger = logging.getLogger("wormhole_heat.stepper")

SIDE_NAMES = tuple(f"{axis}_{side}" for axis in AXIS_NAMES for side in ("lo", "hi"))

# Largest double below one; porosity is capped here so Psi < 1 holds exactly.
POROSITY_CAP = float(np.nextafter(1.0, 0.0))

CellSource = Callable[[float], np.ndarray]


class InvalidMediumError(ValueError):
    """Raised when the initial porosity leaves (0, 1) or permeability is not positive."""


class InvariantViolation(RuntimeError):
    """Raised when a runtime invariant of the scheme fails."""


@dataclass(frozen=True, slots=True)
class TimeControl:
    dt: float
    final_time: float

    def __post_init__(self) -> None:
        if not self.dt > 0 or not self.final_time > 0:
            raise ValueError("dt and final_time must be positive")
        steps = round(self.final_time / self.dt)
        if steps < 1 or not math.isclose(steps * self.dt, self.final_time, rel_tol=1e-9):
            raise ValueError(
                f"final_time {self.final_time!r} is not a whole number of steps of {self.dt!r}"
            )

    @property
    def steps(self) -> int:
        return round(self.final_time / self.dt)

    def time_at(self, step: int) -> float:
        return step * self.dt


@dataclass(frozen=True, slots=True)
class NoFlux:
    pass


@dataclass(frozen=True, slots=True)
class FixedValue:
    value: float


BoundaryCondition = NoFlux | FixedValue


@dataclass(frozen=True)
class BoundarySpec:
    """Temperature conditions per side; velocity and acid fluxes are always no-flux."""

    temperature: Mapping[str, BoundaryCondition] = field(default_factory=dict)

    def __post_init__(self) -> None:
        unknown = sorted(set(self.temperature) - set(SIDE_NAMES))
        if unknown:
            raise ValueError(f"Unknown boundary sides {unknown}; expected {SIDE_NAMES}")

    def temperature_on(self, axis: int, side: int) -> BoundaryCondition:
        name = f"{AXIS_NAMES[axis]}_{'hi' if side > 0 else 'lo'}"
        return self.temperature.get(name, NoFlux())

    def fixed_temperature_sides(self, dim: int) -> list[tuple[int, int, float]]:
        fixed = []
        for axis in range(dim):
            for side in (-1, 1):
                condition = self.temperature_on(axis, side)
                if isinstance(condition, FixedValue):
                    fixed.append((axis, side, float(condition.value)))
        return fixed


@dataclass(frozen=True)
class SourceSpec:
    """Injection/production densities and optional manufactured source callbacks."""

    injection: np.ndarray | None = None
    production: np.ndarray | None = None
    c_inj: float = 1.0
    pressure: CellSource | None = None
    concentration: CellSource | None = None
    porosity: CellSource | None = None
    temperature: CellSource | None = None

    def __post_init__(self) -> None:
        if self.injection is not None and np.any(np.asarray(self.injection) < 0):
            raise ValueError("Injection rates must be non-negative")
        if self.production is not None and np.any(np.asarray(self.production) > 0):
            raise ValueError("Production rates must be non-positive")

    @property
    def manufactured(self) -> bool:
        return any(
            s is not None
            for s in (self.pressure, self.concentration, self.porosity, self.temperature)
        )

    def injection_on(self, grid: StaggeredGrid) -> np.ndarray:
        return _cells_or_zero(grid, self.injection)

    def production_on(self, grid: StaggeredGrid) -> np.ndarray:
        return _cells_or_zero(grid, self.production)

    def pressure_source(self, grid: StaggeredGrid, t: float) -> np.ndarray:
        """``f = f_I + f_P`` plus the manufactured pressure source, at time ``t``."""

        return self.injection_on(grid) + self.production_on(grid) + _call(self.pressure, grid, t)


def _cells_or_zero(grid: StaggeredGrid, values: ArrayLike | None) -> np.ndarray:
    if values is None:
        return np.zeros(grid.shape)
    return np.broadcast_to(np.asarray(values, dtype=np.float64), grid.shape)


def _call(source: CellSource | None, grid: StaggeredGrid, t: float) -> np.ndarray:
    if source is None:
        return np.zeros(grid.shape)
    return np.broadcast_to(np.asarray(source(t), dtype=np.float64), grid.shape)


@dataclass(frozen=True, slots=True)
class StepOptions:
    clamp_cmax: float = 1.0
    permeability_eps: float = DEFAULT_PERMEABILITY_EPS
    # Lower clip of the permeability guard; None uses permeability_eps.
    porosity_floor: float | None = None
    dominance: Literal["raise", "warn"] | None = None
    check_invariants: bool | None = None
    solver_tol: float | None = None
    # Positivity lemmas hold only without a porosity source.
    positivity_checks: bool = True

    @property
    def invariants_enabled(self) -> bool:
        return settings.check_invariants if self.check_invariants is None else self.check_invariants


@dataclass(frozen=True, slots=True)
class SimState:
    step: int
    time: float
    pressure: CellField
    concentration: CellField
    temperature: CellField
    porosity: CellField
    medium: MediumFields
    velocity: FaceField
    conc_flux: FaceField
    heat_flux: FaceField
    reports: tuple[SolveReport, ...] = ()

    @property
    def grid(self) -> StaggeredGrid:
        return self.porosity.grid

    @classmethod
    def initial(
        cls,
        grid: StaggeredGrid,
        *,
        phi0: ArrayLike,
        k0: ArrayLike,
        pressure: ArrayLike,
        concentration: ArrayLike,
        temperature: ArrayLike,
        porosity: ArrayLike | None = None,
    ) -> "SimState":
        """Step-0 state from values sampled at cell centres."""

        phi0_values = np.broadcast_to(np.asarray(phi0, dtype=np.float64), grid.shape)
        k0_values = np.broadcast_to(np.asarray(k0, dtype=np.float64), grid.shape)
        if not np.all((phi0_values > 0.0) & (phi0_values < 1.0)):
            raise InvalidMediumError("Initial porosity must lie strictly inside (0, 1) in every cell")
        if not np.all(k0_values > 0.0):
            raise InvalidMediumError("Initial permeability must be strictly positive in every cell")
        psi = phi0_values if porosity is None else porosity
        if not np.all((np.asarray(psi) > 0.0) & (np.asarray(psi) < 1.0)):
            raise InvalidMediumError("Initial porosity must lie strictly inside (0, 1)")

        medium = MediumFields(
            CellField(grid, phi0_values, FieldRole.POROSITY),
            CellField(grid, k0_values, FieldRole.PERMEABILITY),
        )
        return cls(
            step=0,
            time=0.0,
            pressure=CellField(grid, pressure, FieldRole.PRESSURE),
            concentration=CellField(grid, concentration, FieldRole.CONCENTRATION),
            temperature=CellField(grid, temperature, FieldRole.TEMPERATURE),
            porosity=CellField(grid, psi, FieldRole.POROSITY),
            medium=medium,
            velocity=FaceField.zeros(grid, FieldRole.VELOCITY),
            conc_flux=FaceField.zeros(grid, FieldRole.CONCENTRATION_FLUX),
            heat_flux=FaceField.zeros(grid, FieldRole.HEAT_FLUX),
        )


def _lower(values: np.ndarray, axis: int) -> np.ndarray:
    """Face values at the lower face of every cell."""

    return np.take(values, np.arange(values.shape[axis] - 1), axis=axis)


def _upper(values: np.ndarray, axis: int) -> np.ndarray:
    return np.take(values, np.arange(1, values.shape[axis]), axis=axis)


def _zero_boundary(values: np.ndarray, axis: int) -> np.ndarray:
    out = np.array(values, dtype=np.float64)
    index: list[slice | int] = [slice(None)] * out.ndim
    for end in (0, out.shape[axis] - 1):
        index[axis] = end
        out[tuple(index)] = 0.0
    return out


def _face_mobility(
    porosity: CellField, medium: MediumFields, params: PhysParams, options: StepOptions
) -> list[np.ndarray]:
    """``K(Pi Psi; Pi phi0, Pi K0) / mu`` per axis, zero on boundary faces."""

    mobility = []
    for axis in range(porosity.grid.dim):
        psi_f = interp_face(porosity, axis).component(axis)
        phi0_f = interp_face(medium.phi0, axis).component(axis)
        k0_f = interp_face(medium.k0, axis).component(axis)
        k_f = permeability(
            psi_f,
            phi0_f,
            k0_f,
            guard=True,
            eps=options.permeability_eps,
            phi_min=options.porosity_floor,
        )
        mobility.append(_zero_boundary(k_f / params.mu, axis))
    return mobility


def _transport_bands(
    grid: StaggeredGrid,
    mass: np.ndarray,
    velocity: list[np.ndarray],
    diffusivity: list[np.ndarray],
) -> tuple[np.ndarray, dict[tuple[int, int], np.ndarray]]:
    """Bands of ``mass u + sum_a D_a(vel Pi u - diff d u)`` on interior faces."""

    diag = np.array(mass, dtype=np.float64)
    neighbors: dict[tuple[int, int], np.ndarray] = {}
    for axis in range(grid.dim):
        h = grid.spacing[axis]
        u_minus, u_plus = _lower(velocity[axis], axis), _upper(velocity[axis], axis)
        d_minus, d_plus = _lower(diffusivity[axis], axis), _upper(diffusivity[axis], axis)
        diag += (u_plus - u_minus) / (2.0 * h) + (d_plus + d_minus) / (h * h)
        neighbors[(axis, 1)] = (0.5 * u_plus - d_plus / h) / h
        neighbors[(axis, -1)] = (-0.5 * u_minus - d_minus / h) / h
    return diag, neighbors


def _face_flux(
    grid: StaggeredGrid,
    field_: CellField,
    velocity: list[np.ndarray],
    diffusivity: list[np.ndarray],
) -> list[np.ndarray]:
    components = []
    for axis in range(grid.dim):
        transported = velocity[axis] * interp_face(field_, axis).component(axis)
        diffusive = diffusivity[axis] * d_face(field_, axis).component(axis)
        components.append(_zero_boundary(transported - diffusive, axis))
    return components


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise InvariantViolation(message)


def porosity_step(
    state: SimState,
    dt: float,
    params: PhysParams,
    *,
    clamp_cmax: float = 1.0,
    source: CellSource | None = None,
) -> CellField:
    """Explicit porosity update ``(beta + Psi^n) / (1 + beta)``.

    The optional manufactured source is added as ``dt * h(t^{n+1})`` after the
    update.
    """

    phi0 = state.medium.phi0.values
    if np.any(phi0 >= 1.0) or np.any(phi0 <= 0.0):
        raise InvalidMediumError("Initial porosity must lie strictly inside (0, 1)")

    grid = state.grid
    rate = params.alpha * params.k_c * params.a0 / params.rho_s
    beta = (
        rate
        * reaction_fraction(state.temperature.values, params)
        / (1.0 - phi0)
        * clamp_conc(state.concentration.values, clamp_cmax)
        * dt
    )
    psi = (beta + state.porosity.values) / (1.0 + beta)
    if source is not None:
        psi = psi + dt * _call(source, grid, state.time + dt)
    psi = np.minimum(psi, POROSITY_CAP)
    return CellField(grid, psi, FieldRole.POROSITY)


def pressure_velocity_step(
    state: SimState,
    porosity_new: CellField,
    dt: float,
    params: PhysParams,
    sources: SourceSpec,
    bc: BoundarySpec | None = None,
    options: StepOptions = StepOptions(),
) -> tuple[CellField, FaceField, SolveReport]:
    """Implicit pressure solve and Darcy velocity ``U = -m d P`` with m = K/mu."""

    grid = state.grid
    t_new = state.time + dt
    mobility = _face_mobility(porosity_new, state.medium, params, options)
    zero_velocity = [np.zeros(grid.face_shape(a)) for a in range(grid.dim)]

    mass = np.full(grid.shape, params.gamma / dt)
    diag, neighbors = _transport_bands(grid, mass, zero_velocity, mobility)
    rhs = (
        sources.pressure_source(grid, t_new)
        + (params.gamma / dt) * state.pressure.values
        - (porosity_new.values - state.porosity.values) / dt
    )
    system = assemble(
        diag, neighbors, rhs, symmetric=True, on_violation=options.dominance, label="pressure"
    )
    values, report = solve_increment(system, state.pressure.values, options.solver_tol)
    pressure = CellField(grid, values, FieldRole.PRESSURE)

    components = tuple(
        -mobility[axis] * d_face(pressure, axis).component(axis) for axis in range(grid.dim)
    )
    return pressure, FaceField(grid, components, FieldRole.VELOCITY), report


def concentration_step(
    state: SimState,
    porosity_new: CellField,
    velocity: FaceField,
    dt: float,
    params: PhysParams,
    sources: SourceSpec,
    bc: BoundarySpec | None = None,
    options: StepOptions = StepOptions(),
) -> tuple[CellField, FaceField, SolveReport]:
    """Implicit acid transport with reaction sink and injection/production."""

    grid = state.grid
    t_new = state.time + dt
    psi_new = porosity_new.values
    area = interfacial_area_from_porosity(psi_new, state.medium.phi0.values, params.a0)
    reaction = params.k_c * area * reaction_fraction(state.temperature.values, params)
    production = sources.production_on(grid)

    velocity_faces = [velocity.component(a) for a in range(grid.dim)]
    diffusivity = [
        _zero_boundary(
            interp_face(porosity_new, a).component(a) * params.diffusion_along(a), a
        )
        for a in range(grid.dim)
    ]
    mass = psi_new / dt + reaction - production
    diag, neighbors = _transport_bands(grid, mass, velocity_faces, diffusivity)
    rhs = (
        state.porosity.values * state.concentration.values / dt
        + sources.injection_on(grid) * sources.c_inj
        + _call(sources.concentration, grid, t_new)
    )
    system = assemble(diag, neighbors, rhs, on_violation=options.dominance, label="concentration")
    values, report = solve_increment(system, state.concentration.values, options.solver_tol)
    conc = CellField(grid, values, FieldRole.CONCENTRATION)
    flux = _face_flux(grid, conc, velocity_faces, diffusivity)
    return conc, FaceField(grid, tuple(flux), FieldRole.CONCENTRATION_FLUX), report


def temperature_step(
    state: SimState,
    porosity_new: CellField,
    velocity: FaceField,
    conc_new: CellField,
    dt: float,
    params: PhysParams,
    sources: SourceSpec,
    bc: BoundarySpec | None = None,
    options: StepOptions = StepOptions(),
) -> tuple[CellField, FaceField, SolveReport]:
    """Implicit heat transport; fixed-value sides use a reflected ghost cell."""

    bc = bc or BoundarySpec()
    grid = state.grid
    t_new = state.time + dt
    psi_new = porosity_new.values
    z_old = state.temperature.values

    heat_scale = params.rho_f * params.theta_f
    velocity_faces = [heat_scale * velocity.component(a) for a in range(grid.dim)]
    conductivity_full = [
        thermal_conductivity(interp_face(porosity_new, a).component(a), params)
        for a in range(grid.dim)
    ]
    conductivity = [_zero_boundary(lam, a) for a, lam in enumerate(conductivity_full)]

    mass = heat_capacity(psi_new, params) / dt
    diag, neighbors = _transport_bands(grid, mass, velocity_faces, conductivity)

    area = interfacial_area_from_porosity(psi_new, state.medium.phi0.values, params.a0)
    rate = reaction_rate_closed(clamp_conc(conc_new.values, options.clamp_cmax), z_old, params)
    rhs = (
        heat_capacity(state.porosity.values, params) * z_old / dt
        + area * reaction_heat(z_old) * rate
        + _call(sources.temperature, grid, t_new)
    )

    fixed = bc.fixed_temperature_sides(grid.dim)
    for axis, side, value in fixed:
        h = grid.spacing[axis]
        face = grid.cells[axis] if side > 0 else 0
        cell = grid.cells[axis] - 1 if side > 0 else 0
        lam_b = np.take(conductivity_full[axis], face, axis=axis)
        index: list[slice | int] = [slice(None)] * grid.dim
        index[axis] = cell
        diag[tuple(index)] += 2.0 * lam_b / (h * h)
        rhs[tuple(index)] += 2.0 * lam_b * value / (h * h)

    system = assemble(diag, neighbors, rhs, on_violation=options.dominance, label="temperature")
    values, report = solve_increment(system, z_old, options.solver_tol)
    temp = CellField(grid, values, FieldRole.TEMPERATURE)

    flux = _face_flux(grid, temp, velocity_faces, conductivity)
    for axis, side, value in fixed:
        h = grid.spacing[axis]
        face = grid.cells[axis] if side > 0 else 0
        cell = grid.cells[axis] - 1 if side > 0 else 0
        lam_b = np.take(conductivity_full[axis], face, axis=axis)
        z_adj = np.take(values, cell, axis=axis)
        gradient = (value - z_adj) if side > 0 else (z_adj - value)
        face_index: list[slice | int] = [slice(None)] * grid.dim
        face_index[axis] = face
        flux[axis][tuple(face_index)] = -lam_b * 2.0 * gradient / h
    return temp, FaceField(grid, tuple(flux), FieldRole.HEAT_FLUX), report


def pressure_balance_defect(
    old: SimState, new: SimState, sources: SourceSpec, params: PhysParams
) -> float:
    """Relative defect of ``gamma d_t<P> + d_t<Psi> = <f>`` over one step."""

    dt = new.time - old.time
    grid = new.grid
    d_pressure = params.gamma * (total(new.pressure) - total(old.pressure)) / dt
    d_porosity = (total(new.porosity) - total(old.porosity)) / dt
    forcing = total(CellField(grid, sources.pressure_source(grid, new.time)))
    scale = max(abs(d_pressure), abs(d_porosity), abs(forcing), 1e-300)
    return abs(d_pressure + d_porosity - forcing) / scale


def _check_porosity(
    old: SimState, psi_new: CellField, dt: float, params: PhysParams, options: StepOptions
) -> None:
    values = psi_new.values
    _check(bool(np.all(np.isfinite(values))), "porosity is not finite")
    if not options.positivity_checks:
        return
    phi0 = old.medium.phi0.values
    _check(bool(np.all(values < 1.0)), "porosity reached 1")
    _check(bool(np.all(values >= old.porosity.values)), "porosity decreased")
    _check(bool(np.all(values >= phi0)), "porosity fell below its initial value")
    rate = (values - old.porosity.values) / dt
    bound = params.porosity_rate_bound(phi0, options.clamp_cmax)
    _check(bool(np.all((rate >= 0.0) & (rate < bound))), "porosity rate left its bound")


def _check_finite(name: str, *arrays: np.ndarray) -> None:
    _check(all(bool(np.all(np.isfinite(a))) for a in arrays), f"{name} is not finite")


def advance(
    state: SimState,
    dt: float,
    params: PhysParams,
    sources: SourceSpec,
    bc: BoundarySpec | None = None,
    options: StepOptions = StepOptions(),
) -> SimState:
    """One full step: porosity, pressure/velocity, concentration, temperature."""

    check = options.invariants_enabled
    psi_new = porosity_step(
        state, dt, params, clamp_cmax=options.clamp_cmax, source=sources.porosity
    )
    if check:
        _check_porosity(state, psi_new, dt, params, options)

    pressure, velocity, p_report = pressure_velocity_step(
        state, psi_new, dt, params, sources, bc, options
    )
    if check:
        _check_finite("pressure", pressure.values, *velocity.components)

    conc, conc_flux, c_report = concentration_step(
        state, psi_new, velocity, dt, params, sources, bc, options
    )
    if check:
        _check_finite("concentration", conc.values)

    temp, heat_flux, t_report = temperature_step(
        state, psi_new, velocity, conc, dt, params, sources, bc, options
    )
    if check:
        _check_finite("temperature", temp.values)

    new_state = replace(
        state,
        step=state.step + 1,
        time=(state.step + 1) * dt,
        pressure=pressure,
        concentration=conc,
        temperature=temp,
        porosity=psi_new,
        velocity=velocity,
        conc_flux=conc_flux,
        heat_flux=heat_flux,
        reports=(p_report, c_report, t_report),
    )
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(
            "step %d: iterations p=%d c=%d T=%d, pressure balance defect %.2e",
            new_state.step,
            p_report.iterations,
            c_report.iterations,
            t_report.iterations,
            pressure_balance_defect(state, new_state, sources, params),
        )
    return new_state


def march(
    state: SimState,
    control: TimeControl,
    params: PhysParams,
    sources: SourceSpec,
    bc: BoundarySpec | None = None,
    options: StepOptions = StepOptions(),
) -> Iterator[SimState]:
    """Yield the state after each of the ``control.steps`` steps."""

    for _ in range(control.steps - state.step):
        state = advance(state, control.dt, params, sources, bc, options)
        yield state
