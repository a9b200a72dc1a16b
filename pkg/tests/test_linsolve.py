from __future__ import annotations

import numpy as np
import pytest

from wormhole_heat.linsolve import (
    AssemblyError,
    DiagonalDominanceError,
    SolverConvergenceError,
    assemble,
    solve,
    solve_dense,
    solve_increment,
)
from wormhole_heat.logging_utils import recent_errors


def _zero_edges(band: np.ndarray, axis: int, side: int) -> np.ndarray:
    out = band.copy()
    index: list[slice | int] = [slice(None)] * out.ndim
    index[axis] = -1 if side > 0 else 0
    out[tuple(index)] = 0.0
    return out


def _random_system(shape, rng, *, symmetric=False, margin=0.5):
    neighbors = {}
    for axis in range(len(shape)):
        if symmetric:
            up = _zero_edges(-rng.uniform(0.1, 1.0, shape), axis, 1)
            down = np.zeros(shape)
            n = shape[axis]
            forward = [slice(None)] * len(shape)
            backward = [slice(None)] * len(shape)
            forward[axis] = slice(0, n - 1)
            backward[axis] = slice(1, n)
            down[tuple(backward)] = up[tuple(forward)]
            neighbors[(axis, 1)] = up
            neighbors[(axis, -1)] = down
        else:
            for side in (-1, 1):
                neighbors[(axis, side)] = _zero_edges(rng.uniform(-1.0, 1.0, shape), axis, side)
    off = sum(np.abs(c) for c in neighbors.values())
    diag = off + margin + rng.uniform(0.0, 1.0, shape)
    rhs = rng.standard_normal(shape)
    return diag, neighbors, rhs


def test_identity_system_returns_rhs(rng):
    rhs = rng.standard_normal((3, 4))

    system = assemble(np.ones((3, 4)), {}, rhs)
    x, report = solve(system)

    np.testing.assert_allclose(x, rhs)
    assert report.converged


def test_diagonal_system_is_exact_inverse_scaling(rng):
    diag = rng.uniform(1.0, 5.0, (20, 20))
    rhs = rng.standard_normal((20, 20))

    x, _ = solve(assemble(diag, {}, rhs), method="bicgstab")

    np.testing.assert_allclose(x, rhs / diag, rtol=1e-9)


def test_three_cell_poisson_rows_have_expected_sparsity():
    h = 1.0 / 3.0
    off = np.full((3, 1), -1.0 / h**2)
    up = _zero_edges(off, 0, 1)
    down = _zero_edges(off, 0, -1)
    diag = 1.0 - (up + down)

    matrix = assemble(diag, {(0, 1): up, (0, -1): down}, np.ones((3, 1)), symmetric=True).to_sparse()

    np.testing.assert_allclose(matrix.toarray()[1], [-9.0, 19.0, -9.0])
    np.testing.assert_allclose(matrix.toarray()[0], [10.0, -9.0, 0.0])


def test_assemble_rejects_rows_without_dominance():
    diag = np.ones((3, 3))
    up = _zero_edges(np.full((3, 3), 1.5), 0, 1)

    with pytest.raises(DiagonalDominanceError) as exc:
        assemble(diag, {(0, 1): up}, np.ones((3, 3)), on_violation="raise")

    assert exc.value.diag == pytest.approx(1.0)
    assert exc.value.off_sum == pytest.approx(1.5)


def test_assemble_warn_policy_records_violations():
    diag = np.ones((3, 3))
    up = _zero_edges(np.full((3, 3), 1.5), 0, 1)

    system = assemble(diag, {(0, 1): up}, np.ones((3, 3)), on_violation="warn", label="demo")

    assert system.dominance_violations == 6
    assert recent_errors()[-1]["source"] == "linsolve"


def test_assemble_rejects_bands_crossing_the_boundary():
    with pytest.raises(AssemblyError):
        assemble(np.full((3, 3), 4.0), {(1, -1): np.full((3, 3), -1.0)}, np.ones((3, 3)))


def test_assemble_rejects_asymmetric_bands_declared_symmetric(rng):
    diag, neighbors, rhs = _random_system((4, 4), rng)

    with pytest.raises(AssemblyError):
        assemble(diag, neighbors, rhs, symmetric=True)


def test_assemble_rejects_non_finite_values():
    rhs = np.ones((2, 2))
    rhs[0, 0] = np.nan

    with pytest.raises(AssemblyError):
        assemble(np.ones((2, 2)), {}, rhs)


@pytest.mark.parametrize("symmetric", [True, False])
def test_krylov_matches_dense_oracle(symmetric, rng):
    diag, neighbors, rhs = _random_system((20, 20), rng, symmetric=symmetric)
    system = assemble(diag, neighbors, rhs, symmetric=symmetric)

    reference = solve_dense(system)
    x, report = solve(system, tol=1e-12, method="cg" if symmetric else "bicgstab")

    assert report.residual <= 1e-12
    np.testing.assert_allclose(x, reference, rtol=1e-9, atol=1e-12)


def test_cg_and_bicgstab_agree_on_symmetric_system(rng):
    diag, neighbors, rhs = _random_system((12, 9, 5), rng, symmetric=True)
    system = assemble(diag, neighbors, rhs, symmetric=True)

    x_cg, _ = solve(system, tol=1e-12, method="cg")
    x_bicg, _ = solve(system, tol=1e-12, method="bicgstab")

    np.testing.assert_allclose(x_cg, x_bicg, rtol=1e-9, atol=1e-12)


def test_non_convergence_raises_without_fallback(rng):
    diag, neighbors, rhs = _random_system((20, 20), rng, symmetric=True, margin=1e-3)
    system = assemble(diag, neighbors, rhs, symmetric=True)

    with pytest.raises(SolverConvergenceError) as exc:
        solve(system, tol=1e-12, max_iter=1, method="cg", fallback=False)

    assert not exc.value.report.converged


def test_direct_fallback_recovers_from_stalled_krylov(rng):
    diag, neighbors, rhs = _random_system((20, 20), rng, symmetric=True, margin=1e-3)
    system = assemble(diag, neighbors, rhs, symmetric=True)

    x, report = solve(system, tol=1e-12, max_iter=1, method="cg")

    assert report.method == "cg+direct"
    np.testing.assert_allclose(x, solve_dense(system), rtol=1e-9, atol=1e-12)


def test_zero_rhs_gives_trivial_solution():
    x, report = solve(assemble(np.full((3, 3), 2.0), {}, np.zeros((3, 3))))

    assert report.method == "trivial"
    assert not np.any(x)


def test_solve_increment_reaches_same_solution(rng):
    diag, neighbors, rhs = _random_system((15, 15), rng)
    system = assemble(diag, neighbors, rhs)

    x, _ = solve_increment(system, np.full((15, 15), 3.0), tol=1e-12, method="bicgstab")

    np.testing.assert_allclose(x, solve_dense(system), rtol=1e-9, atol=1e-10)


def test_dense_solver_refuses_large_systems():
    system = assemble(np.ones((65, 65)), {}, np.ones((65, 65)))

    with pytest.raises(AssemblyError):
        solve_dense(system)


def _offset_pressure_system(rng, n=12):
    """Storage ``1e-5`` against face mobilities up to ``1/h^2`` around ``p = 1.52e5``."""

    shape = (n, n)
    neighbors = {}
    off_sum = np.zeros(shape)
    for axis in range(2):
        faces = 10.0 ** rng.uniform(-5.0, 0.0, shape) / 6.25e-6
        up = _zero_edges(faces, axis, 1)
        down = np.zeros(shape)
        forward = [slice(None)] * 2
        backward = [slice(None)] * 2
        forward[axis] = slice(0, n - 1)
        backward[axis] = slice(1, n)
        down[tuple(backward)] = up[tuple(forward)]
        neighbors[(axis, 1)] = -up
        neighbors[(axis, -1)] = -down
        off_sum += up + down
    x_old = np.full(shape, 1.52e5)
    wells = np.zeros(shape)
    wells[0, :] = 1e-4
    wells[-1, :] = -1e-4
    system = assemble(1e-5 + off_sum, neighbors, 1e-5 * x_old + wells, symmetric=True)
    return system, x_old


@pytest.mark.parametrize("method", ["dense", "direct", "cg"])
def test_increment_residual_is_relative_to_full_rhs(method, rng):
    system, x_old = _offset_pressure_system(rng)

    x, report = solve_increment(system, x_old, tol=1e-10, method=method)

    assert report.converged
    assert report.residual <= 1e-10
    assert np.all(np.isfinite(x))


def test_direct_solution_at_rounding_floor_is_accepted(rng):
    diag, neighbors, rhs = _random_system((10, 10), rng)
    system = assemble(diag, neighbors, rhs)

    x, report = solve(system, tol=1e-18, method="dense")

    assert report.converged
    assert report.residual > 0.0
    np.testing.assert_allclose(x, solve_dense(system), rtol=1e-12, atol=1e-14)
