"""Banded (5-/7-point) linear systems: assembly checks and Krylov solves.

Coefficients are stored per cell in the grid's ``ij`` layout.  ``neighbors[(axis,
+1)]`` multiplies the unknown of the next cell along ``axis`` and
``neighbors[(axis, -1)]`` the previous one.  Bands pointing out of the domain
must be exactly zero.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Literal, Mapping

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .config import settings
from .logging_utils import record_run_error

__all__ = [
    "DENSE_ORACLE_LIMIT",
    "AssemblyError",
    "BandedSystem",
    "DiagonalDominanceError",
    "SolveReport",
    "SolverConvergenceError",
    "assemble",
    "solve",
    "solve_dense",
    "solve_increment",
]

logger = logging.getLogger("wormhole_heat.linsolve")

DENSE_ORACLE_LIMIT = 4096
REFINEMENT_ROUNDS = 2
ROUNDING_FACTOR = 64.0

SolveMethod = Literal["auto", "cg", "bicgstab", "dense", "direct"]
Neighbor = tuple[int, int]


class AssemblyError(ValueError):
    """Raised when band arrays are malformed or couple across the boundary."""


class DiagonalDominanceError(AssemblyError):
    def __init__(self, row: int, cell: tuple[int, ...], diag: float, off_sum: float) -> None:
        self.row = row
        self.cell = cell
        self.diag = diag
        self.off_sum = off_sum
        super().__init__(
            f"Row {row} (cell {cell}) is not strictly diagonally dominant: "
            f"|a_ii|={diag:.6e} <= sum|a_ij|={off_sum:.6e}. "
            "Reduce the time step or refine the grid."
        )


@dataclass(slots=True)
class SolveReport:
    method: str
    unknowns: int
    iterations: int
    residual: float
    converged: bool
    dominance_violations: int = 0

    def to_dict(self) -> dict[str, object]:
        return asdict(self)


class SolverConvergenceError(RuntimeError):
    def __init__(self, report: SolveReport, tol: float) -> None:
        self.report = report
        super().__init__(
            f"{report.method} did not reach relative residual {tol:.1e} "
            f"after {report.iterations} iterations (residual {report.residual:.3e})"
        )


def _fortran_strides(shape: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(math.prod(shape[:axis]) for axis in range(len(shape)))


@dataclass(frozen=True, slots=True)
class BandedSystem:
    shape: tuple[int, ...]
    diag: np.ndarray
    neighbors: Mapping[Neighbor, np.ndarray]
    rhs: np.ndarray
    symmetric: bool = False
    dominance_violations: int = 0
    _matrix: list = field(default_factory=list, repr=False, compare=False)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def to_sparse(self) -> scipy.sparse.csr_matrix:
        if self._matrix:
            return self._matrix[0]
        n = self.size
        strides = _fortran_strides(self.shape)
        bands = [self.diag.ravel(order="F")]
        offsets = [0]
        for (axis, side), coeff in sorted(self.neighbors.items()):
            stride = strides[axis]
            if stride >= n:
                continue
            flat = coeff.ravel(order="F")
            if side > 0:
                bands.append(flat[: n - stride])
                offsets.append(stride)
            else:
                bands.append(flat[stride:])
                offsets.append(-stride)
        matrix = scipy.sparse.diags(bands, offsets, shape=(n, n), format="csr")
        self._matrix.append(matrix)
        return matrix

    def rhs_vector(self) -> np.ndarray:
        return self.rhs.ravel(order="F")

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Apply the operator to a cell-shaped array."""

        flat = self.to_sparse() @ np.asarray(x, dtype=np.float64).ravel(order="F")
        return flat.reshape(self.shape, order="F")

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.rhs - self.matvec(x)

    def with_rhs(self, rhs: np.ndarray) -> "BandedSystem":
        return replace(self, rhs=np.asarray(rhs, dtype=np.float64), _matrix=self._matrix)


def _boundary_slice(shape: tuple[int, ...], axis: int, side: int) -> tuple[slice | int, ...]:
    index: list[slice | int] = [slice(None)] * len(shape)
    index[axis] = shape[axis] - 1 if side > 0 else 0
    return tuple(index)


def assemble(
    diag: np.ndarray,
    neighbors: Mapping[Neighbor, np.ndarray],
    rhs: np.ndarray,
    *,
    symmetric: bool = False,
    on_violation: Literal["raise", "warn"] | None = None,
    label: str = "system",
) -> BandedSystem:
    """Validate band arrays and return an immutable :class:`BandedSystem`.

    ``on_violation`` selects what happens to rows that are not strictly
    diagonally dominant; it defaults to ``settings.dominance_policy``.
    """

    diag = np.array(diag, dtype=np.float64)
    rhs = np.array(rhs, dtype=np.float64)
    shape = diag.shape
    if rhs.shape != shape:
        raise AssemblyError(f"{label}: rhs shape {rhs.shape} does not match diagonal {shape}")

    bands: dict[Neighbor, np.ndarray] = {}
    for (axis, side), coeff in neighbors.items():
        if not 0 <= axis < len(shape) or side not in (-1, 1):
            raise AssemblyError(f"{label}: invalid neighbour key {(axis, side)!r}")
        coeff = np.array(coeff, dtype=np.float64)
        if coeff.shape != shape:
            raise AssemblyError(
                f"{label}: band {(axis, side)} has shape {coeff.shape}, expected {shape}"
            )
        if np.any(coeff[_boundary_slice(shape, axis, side)] != 0.0):
            raise AssemblyError(f"{label}: band {(axis, side)} couples across the boundary")
        coeff.setflags(write=False)
        bands[(axis, side)] = coeff

    if not (np.all(np.isfinite(diag)) and np.all(np.isfinite(rhs))):
        raise AssemblyError(f"{label}: non-finite coefficients or right-hand side")
    if any(not np.all(np.isfinite(c)) for c in bands.values()):
        raise AssemblyError(f"{label}: non-finite neighbour coefficients")

    if symmetric:
        for axis in range(len(shape)):
            up = bands.get((axis, 1))
            down = bands.get((axis, -1))
            if up is None and down is None:
                continue
            n = shape[axis]
            forward = np.take(up, np.arange(n - 1), axis=axis) if up is not None else 0.0
            backward = np.take(down, np.arange(1, n), axis=axis) if down is not None else 0.0
            if not np.allclose(forward, backward, rtol=1e-12, atol=0.0):
                raise AssemblyError(f"{label}: declared symmetric but axis {axis} bands differ")

    off_sum = sum((np.abs(c) for c in bands.values()), np.zeros(shape))
    margin = np.abs(diag) - off_sum
    bad = margin <= 0.0
    violations = int(np.count_nonzero(bad))
    if violations:
        flat_margin = margin.ravel(order="F")
        row = int(np.argmin(flat_margin))
        cell = tuple(int(i) for i in np.unravel_index(row, shape, order="F"))
        error = DiagonalDominanceError(row, cell, float(abs(diag[cell])), float(off_sum[cell]))
        policy = on_violation or settings.dominance_policy
        if policy == "raise":
            raise error
        logger.warning("%s: %d rows lose strict diagonal dominance; %s", label, violations, error)
        record_run_error(
            source="linsolve",
            message=f"{label}: diagonal dominance lost in {violations} rows",
            exception=error,
            context={"row": row, "cell": list(cell)},
            severity="warning",
        )

    diag.setflags(write=False)
    rhs.setflags(write=False)
    return BandedSystem(shape, diag, bands, rhs, symmetric, violations)


def solve_dense(system: BandedSystem) -> np.ndarray:
    """Direct dense elimination; the reference path for small systems."""

    solution = _factorize(system, system.to_sparse(), "dense")(system.rhs_vector())
    return solution.reshape(system.shape, order="F")


def _relative_residual(matrix, x: np.ndarray, b: np.ndarray, scale: float) -> float:
    return float(np.linalg.norm(matrix @ x - b) / scale)


def _rounding_floor(matrix, x: np.ndarray, scale: float) -> float:
    """Residual a backward-stable solve can reach in double precision."""

    magnitude = abs(matrix) @ np.abs(x)
    return float(ROUNDING_FACTOR * np.finfo(np.float64).eps * np.linalg.norm(magnitude) / scale)


def _factorize(system: BandedSystem, matrix, method: str) -> Callable[[np.ndarray], np.ndarray]:
    if method == "dense":
        if system.size > DENSE_ORACLE_LIMIT:
            raise AssemblyError(
                f"Dense solve limited to {DENSE_ORACLE_LIMIT} unknowns, got {system.size}"
            )
        factors = scipy.linalg.lu_factor(matrix.toarray())
        return lambda rhs: scipy.linalg.lu_solve(factors, rhs)
    return scipy.sparse.linalg.splu(matrix.tocsc()).solve


def _direct(
    apply: Callable[[np.ndarray], np.ndarray], matrix, b: np.ndarray, scale: float, tol: float
) -> tuple[np.ndarray, float]:
    x = apply(b)
    residual = _relative_residual(matrix, x, b, scale)
    for _ in range(REFINEMENT_ROUNDS):
        if residual <= tol:
            break
        x = x + apply(b - matrix @ x)
        residual = _relative_residual(matrix, x, b, scale)
    return x, residual


def _krylov(
    matrix: scipy.sparse.csr_matrix,
    b: np.ndarray,
    x0: np.ndarray | None,
    method: str,
    atol: float,
    max_iter: int,
) -> tuple[np.ndarray, int]:
    inv_diag = 1.0 / matrix.diagonal()
    preconditioner = scipy.sparse.linalg.LinearOperator(
        matrix.shape, matvec=lambda r: inv_diag * r, dtype=np.float64
    )
    iterations = 0

    def _count(_xk: np.ndarray) -> None:
        nonlocal iterations
        iterations += 1

    routine = scipy.sparse.linalg.cg if method == "cg" else scipy.sparse.linalg.bicgstab
    x, _info = routine(
        matrix,
        b,
        x0=x0,
        rtol=0.0,
        atol=atol,
        maxiter=max_iter,
        M=preconditioner,
        callback=_count,
    )
    return x, iterations


def solve(
    system: BandedSystem,
    tol: float | None = None,
    max_iter: int | None = None,
    *,
    x0: np.ndarray | None = None,
    method: SolveMethod = "auto",
    fallback: bool = True,
    reference_norm: float | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Solve ``A x = b`` to ``||A x - b|| <= tol * reference_norm``.

    ``reference_norm`` defaults to ``||b||``.  ``auto`` picks the dense path for
    systems up to ``settings.dense_cutoff`` unknowns, CG for symmetric systems
    and BiCGStab otherwise.  When a Krylov solve stalls and ``fallback`` is set,
    a sparse LU factorisation is tried before giving up.  A solution whose
    residual sits at the double-precision floor ``eps * || |A| |x| ||`` is
    accepted even when that floor exceeds ``tol``.
    """

    tol = settings.solver_tol if tol is None else tol
    n = system.size
    max_iter = settings.max_iterations(n) if max_iter is None else max_iter
    b = system.rhs_vector()
    b_norm = float(np.linalg.norm(b))

    if b_norm == 0.0:
        return np.zeros(system.shape), SolveReport(
            "trivial", n, 0, 0.0, True, system.dominance_violations
        )
    scale = b_norm if not reference_norm else float(reference_norm)

    if method == "auto":
        if n <= settings.dense_cutoff:
            method = "dense"
        else:
            method = "cg" if system.symmetric else "bicgstab"

    matrix = system.to_sparse()
    iterations = 0
    if method in ("dense", "direct"):
        x, residual = _direct(_factorize(system, matrix, method), matrix, b, scale, tol)
    elif method in ("cg", "bicgstab"):
        start = None if x0 is None else np.asarray(x0, dtype=np.float64).ravel(order="F")
        x, iterations = _krylov(matrix, b, start, method, 0.1 * tol * scale, max_iter)
        residual = _relative_residual(matrix, x, b, scale)
    else:
        raise ValueError(f"Unknown solve method {method!r}")

    limit = max(tol, _rounding_floor(matrix, x, scale))
    if not residual <= limit and method in ("cg", "bicgstab") and fallback:
        logger.warning(
            "%s stalled at residual %.3e after %d iterations; retrying with sparse LU",
            method,
            residual,
            iterations,
        )
        x, residual = _direct(_factorize(system, matrix, "direct"), matrix, b, scale, tol)
        limit = max(tol, _rounding_floor(matrix, x, scale))
        method = f"{method}+direct"

    report = SolveReport(
        method, n, iterations, residual, bool(residual <= limit), system.dominance_violations
    )
    if not report.converged:
        raise SolverConvergenceError(report, tol)
    if residual > tol:
        logger.debug("%s residual %.2e is at the rounding floor %.2e", method, residual, limit)
    logger.debug("Solved %d unknowns with %s: %d iterations, residual %.2e", n, method, iterations, residual)
    return x.reshape(system.shape, order="F"), report


def solve_increment(
    system: BandedSystem,
    x_old: np.ndarray,
    tol: float | None = None,
    max_iter: int | None = None,
    *,
    method: SolveMethod = "auto",
    fallback: bool = True,
) -> tuple[np.ndarray, SolveReport]:
    """Solve for the change from ``x_old``: ``A d = b - A x_old`` and return ``x_old + d``.

    The residual is measured against ``||b||`` of the full system, so the
    test matches a direct solve of ``A x = b``.
    """

    x_old = np.asarray(x_old, dtype=np.float64)
    correction = system.with_rhs(system.residual(x_old))
    reference = float(np.linalg.norm(system.rhs)) or None
    delta, report = solve(
        correction, tol, max_iter, method=method, fallback=fallback, reference_norm=reference
    )
    return x_old + delta, report
