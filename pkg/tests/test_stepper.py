from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from wormhole_heat.constitutive import (
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
from wormhole_heat.grid import CellField, FaceField, FieldRole, StaggeredGrid, total
from wormhole_heat.mms import example1_case
from wormhole_heat.stepper import (
    BoundarySpec,
    FixedValue,
    InvalidMediumError,
    SimState,
    SourceSpec,
    StepOptions,
    TimeControl,
    advance,
    concentration_step,
    march,
    porosity_step,
    pressure_balance_defect,
    temperature_step,
)

VERIFY = PhysParams.verification()


def _state(grid, *, phi0=0.2, k0=1.0, pressure=1.0, concentration=0.0, temperature=10.0, porosity=None):
    return SimState.initial(
        grid,
        phi0=phi0,
        k0=k0,
        pressure=pressure,
        concentration=concentration,
        temperature=temperature,
        porosity=porosity,
    )


def test_porosity_is_unchanged_without_acid(grid2d):
    state = _state(grid2d, porosity=0.35)

    psi = porosity_step(state, 10.0, VERIFY)

    np.testing.assert_array_equal(psi.values, state.porosity.values)


def test_porosity_update_uses_recast_formula():
    grid = StaggeredGrid.cube(0.0, 1.0, 2, 2)
    # alpha k_c a0 / rho_s = 0.1, fraction at T = t_ref is 0.5, 1/(1 - phi0) = 1.25
    state = _state(grid, concentration=1.0, temperature=VERIFY.t_ref)

    psi = porosity_step(state, 8.0, VERIFY)

    np.testing.assert_allclose(psi.values, 0.7 / 1.5)


def test_porosity_stays_bounded_for_random_states(rng):
    grid = StaggeredGrid.cube(0.0, 1.0, 10, 2)
    for _ in range(10):
        phi0 = rng.uniform(0.01, 0.9, grid.shape)
        psi = phi0 + rng.uniform(0.0, 1.0, grid.shape) * (1.0 - phi0) * 0.999
        state = _state(
            grid,
            phi0=phi0,
            porosity=psi,
            concentration=rng.uniform(-1.0, 5.0, grid.shape),
            temperature=rng.uniform(5.0, 50.0, grid.shape),
        )
        dt = float(rng.uniform(1e-3, 50.0))

        new = porosity_step(state, dt, VERIFY, clamp_cmax=4.0).values
        rate = (new - psi) / dt

        assert np.all(new < 1.0)
        assert np.all(new >= psi)
        assert np.all(new >= phi0)
        assert np.all(rate < VERIFY.porosity_rate_bound(phi0, 4.0))


def test_initial_state_rejects_invalid_medium(grid2d):
    with pytest.raises(InvalidMediumError):
        _state(grid2d, phi0=1.0)
    with pytest.raises(InvalidMediumError):
        _state(grid2d, k0=0.0)


def test_time_control_requires_whole_steps():
    assert TimeControl(1e5, 1e7).steps == 100
    with pytest.raises(ValueError):
        TimeControl(0.3, 1.0)


def test_source_spec_checks_signs(grid2d):
    with pytest.raises(ValueError):
        SourceSpec(injection=-np.ones(grid2d.shape))
    with pytest.raises(ValueError):
        SourceSpec(production=np.ones(grid2d.shape))


def test_boundary_spec_rejects_unknown_sides():
    with pytest.raises(ValueError):
        BoundarySpec({"left": FixedValue(298.0)})


def test_constant_state_is_a_fixed_point(grid3d):
    state = _state(grid3d, pressure=3.0, temperature=12.0)

    new = advance(state, 0.5, VERIFY, SourceSpec())

    np.testing.assert_allclose(new.pressure.values, 3.0, rtol=1e-14)
    np.testing.assert_allclose(new.temperature.values, 12.0, rtol=1e-14)
    assert not np.any(new.concentration.values)
    for component in new.velocity.components:
        np.testing.assert_allclose(component, 0.0, atol=1e-12)
    assert new.step == 1 and new.time == 0.5


def test_frozen_coefficient_steps_conserve_acid_and_heat(rng):
    grid = StaggeredGrid((0.0, 0.0), (1.0, 0.5), (8, 6))
    psi = rng.uniform(0.1, 0.9, grid.shape)
    state = _state(
        grid,
        phi0=rng.uniform(0.05, 0.1, grid.shape),
        porosity=psi,
        concentration=rng.uniform(0.0, 1.0, grid.shape),
        temperature=rng.uniform(5.0, 15.0, grid.shape),
    )
    frozen = state.porosity
    still = FaceField.zeros(grid, FieldRole.VELOCITY)
    no_acid = CellField(grid, np.zeros(grid.shape), FieldRole.CONCENTRATION)
    sources = SourceSpec()
    options = StepOptions(solver_tol=1e-13)
    sigma = heat_capacity(psi, VERIFY)
    area = interfacial_area_from_porosity(psi, state.medium.phi0.values, VERIFY.a0)
    dt = 0.01

    for _ in range(50):
        conc, _, _ = concentration_step(state, frozen, still, dt, VERIFY, sources, options=options)
        sink = VERIFY.k_c * area * reaction_fraction(state.temperature.values, VERIFY)
        before = np.sum(psi * state.concentration.values)
        after = np.sum(psi * conc.values) + dt * np.sum(sink * conc.values)
        assert after == pytest.approx(before, rel=1e-10)

        temp, _, _ = temperature_step(
            state, frozen, still, no_acid, dt, VERIFY, sources, options=options
        )
        assert np.sum(sigma * temp.values) == pytest.approx(
            np.sum(sigma * state.temperature.values), rel=1e-10
        )
        state = replace(
            state, step=state.step + 1, time=state.time + dt, concentration=conc, temperature=temp
        )

    assert np.all(state.concentration.values >= 0.0)


def test_injection_run_balances_pressure_and_conserves_heat():
    grid = StaggeredGrid.cube(0.0, 1.0, 8, 2)
    injection = np.zeros(grid.shape)
    injection[0, :] = 1.0
    sources = SourceSpec(injection=injection, c_inj=0.0)
    x, y = grid.cell_coordinates()
    state = _state(grid, temperature=10.0 + np.cos(np.pi * x) * np.cos(np.pi * y))
    options = StepOptions(solver_tol=1e-12)

    def heat(s: SimState) -> float:
        return float(np.sum(heat_capacity(s.porosity.values, VERIFY) * s.temperature.values))

    initial_heat = heat(state)
    previous = state
    for current in march(state, TimeControl(0.01, 0.5), VERIFY, sources, None, options):
        assert pressure_balance_defect(previous, current, sources, VERIFY) <= 1e-10
        assert heat(current) == pytest.approx(initial_heat, rel=1e-12)
        previous = current

    assert previous.step == 50
    assert not np.any(previous.concentration.values)
    assert total(previous.pressure) > total(state.pressure)
    assert previous.velocity.has_zero_boundary()
    assert np.all(previous.velocity.component(0)[1:-1] > 0.0)


def _oracle_step(case, grid, state, dt):
    """Dense hand assembly of one full step for a 2-D grid."""

    p = case.params
    n0, n1 = grid.shape
    h = grid.spacing[0]
    t1 = state.time + dt
    xs = grid.cell_coordinates()
    cells = [(i, j) for j in range(n1) for i in range(n0)]
    index = {cell: k for k, cell in enumerate(cells)}
    phi0 = case.phi0
    psi_old = state.porosity.values
    c_old = state.concentration.values
    z_old = state.temperature.values

    frac = reaction_fraction(z_old, p)
    beta = p.alpha * p.k_c * p.a0 / p.rho_s * frac / (1 - phi0) * clamp_conc(c_old, case.clamp_cmax) * dt
    psi = (beta + psi_old) / (1 + beta) + dt * case.porosity_source(t1, *xs)

    def neighbours(i, j):
        for axis, (di, dj) in ((0, (1, 0)), (0, (-1, 0)), (1, (0, 1)), (1, (0, -1))):
            a, b = i + di, j + dj
            if 0 <= a < n0 and 0 <= b < n1:
                yield (a, b), 1 if (di + dj) > 0 else -1

    def face_avg(values, cell, other):
        return 0.5 * (values[cell] + values[other])

    def mobility(cell, other):
        return permeability(face_avg(psi, cell, other), phi0, case.k0, guard=False) / p.mu

    size = len(cells)
    a = np.zeros((size, size))
    rhs = np.zeros(size)
    for cell in cells:
        r = index[cell]
        a[r, r] = p.gamma / dt
        for other, _ in neighbours(*cell):
            m = mobility(cell, other)
            a[r, r] += m / h**2
            a[r, index[other]] -= m / h**2
        rhs[r] = (
            case.pressure_source(t1, *(x[cell] for x in xs))
            + p.gamma / dt * state.pressure.values[cell]
            - (psi[cell] - psi_old[cell]) / dt
        )
    pressure = np.linalg.solve(a, rhs)
    pres = np.zeros(grid.shape)
    for cell in cells:
        pres[cell] = pressure[index[cell]]

    def velocity(cell, other, side):
        # Face component value, positive along the axis.
        return -mobility(cell, other) * (pres[other] - pres[cell]) / h * side

    def transport(mass, scale, diff, rhs_values):
        a = np.zeros((size, size))
        for cell in cells:
            r = index[cell]
            a[r, r] = mass[cell]
            for other, side in neighbours(*cell):
                u = scale * velocity(cell, other, side)
                d = diff(cell, other)
                a[r, r] += side * u / (2 * h) + d / h**2
                a[r, index[other]] += side * u / (2 * h) - d / h**2
        solution = np.linalg.solve(a, np.array([rhs_values[cell] for cell in cells]))
        out = np.zeros(grid.shape)
        for cell in cells:
            out[cell] = solution[index[cell]]
        return out

    area = interfacial_area_from_porosity(psi, phi0, p.a0)
    conc = transport(
        psi / dt + p.k_c * area * frac,
        1.0,
        lambda cell, other: face_avg(psi, cell, other) * p.diffusion_along(0),
        psi_old * c_old / dt + case.concentration_source(t1, *xs),
    )
    rate = reaction_rate_closed(clamp_conc(conc, case.clamp_cmax), z_old, p)
    temp = transport(
        heat_capacity(psi, p) / dt,
        p.rho_f * p.theta_f,
        lambda cell, other: thermal_conductivity(face_avg(psi, cell, other), p),
        heat_capacity(psi_old, p) * z_old / dt
        + area * reaction_heat(z_old) * rate
        + case.temperature_source(t1, *xs),
    )
    return psi, pres, conc, temp


def test_full_step_matches_dense_hand_assembly():
    case = example1_case()
    grid = case.grid(4)
    dt = grid.spacing[0] ** 2
    state = case.initial_state(grid)
    for _ in range(2):
        state = advance(state, dt, case.params, case.sources_on(grid), None, case.step_options(1e-13))

    new = advance(state, dt, case.params, case.sources_on(grid), None, case.step_options(1e-13))
    psi, pres, conc, temp = _oracle_step(case, grid, state, dt)

    np.testing.assert_allclose(new.porosity.values, psi, rtol=1e-12)
    np.testing.assert_allclose(new.pressure.values, pres, rtol=1e-10)
    np.testing.assert_allclose(new.concentration.values, conc, rtol=1e-10)
    np.testing.assert_allclose(new.temperature.values, temp, rtol=1e-10)


def test_fixed_temperature_single_cell_matches_closed_form():
    grid = StaggeredGrid((0.0, 0.0), (0.5, 1.0), (1, 1))
    state = _state(grid, temperature=300.0)
    bc = BoundarySpec({"x_lo": FixedValue(298.0)})
    dt, h = 0.1, 0.5

    new = advance(state, dt, VERIFY, SourceSpec(), bc)

    sigma = heat_capacity(0.2, VERIFY)
    lam = thermal_conductivity(0.2, VERIFY)
    expected = (sigma * 300.0 / dt + 2 * lam * 298.0 / h**2) / (sigma / dt + 2 * lam / h**2)
    assert new.temperature.values[0, 0] == pytest.approx(expected, rel=1e-13)
    flux = new.heat_flux.component(0)
    assert flux[0, 0] == pytest.approx(-lam * 2 * (expected - 298.0) / h, rel=1e-12)
    assert flux[1, 0] == 0.0


def test_fixed_temperature_side_cools_towards_boundary_value():
    grid = StaggeredGrid((0.0, 0.0), (1.0, 1.0), (6, 3))
    state = _state(grid, temperature=300.0)
    bc = BoundarySpec({"x_lo": FixedValue(298.0)})

    states = list(march(state, TimeControl(0.05, 0.5), VERIFY, SourceSpec(), bc))
    final = states[-1].temperature.values

    assert np.all(final < 300.0) and np.all(final > 298.0)
    # The profile is monotone in x and uniform in y.
    assert np.all(np.diff(final, axis=0) > 0.0)
    np.testing.assert_allclose(final, final[:, :1] * np.ones((1, 3)), rtol=1e-12)
    assert np.all(states[-1].heat_flux.component(0)[0, :] < 0.0)
