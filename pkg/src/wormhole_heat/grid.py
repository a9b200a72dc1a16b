"""Uniform staggered (MAC) grid, field containers and discrete operators.

Scalars live at cell centres, fluxes at the faces normal to each axis.  Arrays
are stored with ``indexing="ij"`` so ``values[i, j(, l)]`` is cell ``(i, j(, l))``
counted from zero; cell ``i`` along an axis has centre ``lower + (i + 1/2) h`` and
face ``i`` sits at ``lower + i h`` (``i = 0..N``).  Flattening for the linear
solvers uses Fortran order, so the x index runs fastest.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "AXIS_NAMES",
    "CellField",
    "FaceField",
    "FieldRole",
    "GridError",
    "StaggeredGrid",
    "D_cell",
    "d_face",
    "divergence",
    "dt_quotient",
    "gradient",
    "inner_M",
    "inner_TM",
    "inner_face",
    "inner_x",
    "inner_y",
    "inner_z",
    "interp_face",
    "interpolate",
    "norm_M",
    "norm_TM",
    "total",
]

AXIS_NAMES = ("x", "y", "z")

# Relative tolerance used when a physical coordinate must hit a cell centre.
_CENTRE_TOL = 1e-6


class GridError(ValueError):
    """Raised for malformed grids, mismatched fields or invalid axes."""


class FieldRole(str, enum.Enum):
    """Semantic tag carried by a field (unit documented per member)."""

    GENERIC = "generic"
    PRESSURE = "pressure"  # Pa
    CONCENTRATION = "concentration"  # mol/m^3
    TEMPERATURE = "temperature"  # K
    POROSITY = "porosity"  # dimensionless
    PERMEABILITY = "permeability"  # m^2
    VELOCITY = "velocity"  # m/s
    CONCENTRATION_FLUX = "concentration_flux"
    HEAT_FLUX = "heat_flux"


@dataclass(frozen=True, slots=True)
class StaggeredGrid:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]
    spacing: tuple[float, ...] = field(init=False, compare=False)

    def __post_init__(self) -> None:
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        cells = tuple(int(n) for n in self.cells)

        if len(cells) not in (2, 3):
            raise GridError(f"Grid dimension must be 2 or 3, got {len(cells)}")
        if not (len(lower) == len(upper) == len(cells)):
            raise GridError("lower, upper and cells must have the same length")
        for axis, (lo, hi, n) in enumerate(zip(lower, upper, cells)):
            if not hi > lo:
                raise GridError(f"Axis {AXIS_NAMES[axis]}: upper {hi} must exceed lower {lo}")
            if n < 1:
                raise GridError(f"Axis {AXIS_NAMES[axis]}: need at least one cell, got {n}")

        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(
            self, "spacing", tuple((hi - lo) / n for lo, hi, n in zip(lower, upper, cells))
        )

    @classmethod
    def cube(cls, lower: float, upper: float, n: int, dim: int) -> "StaggeredGrid":
        """Grid on ``(lower, upper)^dim`` with ``n`` cells per axis."""

        return cls((lower,) * dim, (upper,) * dim, (n,) * dim)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def size(self) -> int:
        return math.prod(self.cells)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacing)

    @property
    def measure(self) -> float:
        """Area (2-D) or volume (3-D) of the domain."""

        return math.prod(hi - lo for lo, hi in zip(self.lower, self.upper))

    def check_axis(self, axis: int) -> int:
        if not isinstance(axis, (int, np.integer)) or not 0 <= axis < self.dim:
            raise GridError(f"Axis {axis!r} is out of range for a {self.dim}-D grid")
        return int(axis)

    def face_shape(self, axis: int) -> tuple[int, ...]:
        axis = self.check_axis(axis)
        shape = list(self.cells)
        shape[axis] += 1
        return tuple(shape)

    def centers(self, axis: int) -> np.ndarray:
        axis = self.check_axis(axis)
        h = self.spacing[axis]
        return self.lower[axis] + (np.arange(self.cells[axis]) + 0.5) * h

    def faces(self, axis: int) -> np.ndarray:
        axis = self.check_axis(axis)
        return self.lower[axis] + np.arange(self.cells[axis] + 1) * self.spacing[axis]

    def cell_coordinates(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*(self.centers(a) for a in range(self.dim)), indexing="ij"))

    def face_coordinates(self, axis: int) -> tuple[np.ndarray, ...]:
        axis = self.check_axis(axis)
        axes = [self.faces(a) if a == axis else self.centers(a) for a in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def column_index(self, axis: int, coordinate: float) -> int:
        """Return the cell index whose centre along ``axis`` equals ``coordinate``."""

        axis = self.check_axis(axis)
        h = self.spacing[axis]
        position = (float(coordinate) - self.lower[axis]) / h - 0.5
        index = int(round(position))
        if abs(position - index) > _CENTRE_TOL or not 0 <= index < self.cells[axis]:
            raise GridError(
                f"Coordinate {coordinate!r} is not a cell centre along {AXIS_NAMES[axis]} "
                f"(h={h:g}, lower={self.lower[axis]:g})"
            )
        return index

    def cell_index(self, point: tuple[float, ...]) -> tuple[int, ...]:
        if len(point) != self.dim:
            raise GridError(f"Point {point!r} does not have {self.dim} coordinates")
        return tuple(self.column_index(axis, coord) for axis, coord in enumerate(point))

    def describe(self) -> dict[str, list[float] | list[int]]:
        return {"lower": list(self.lower), "upper": list(self.upper), "cells": list(self.cells)}


def _frozen(values: np.ndarray) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, slots=True)
class CellField:
    grid: StaggeredGrid
    values: np.ndarray
    role: FieldRole = FieldRole.GENERIC

    def __post_init__(self) -> None:
        values = _frozen(np.broadcast_to(self.values, self.grid.shape) if np.ndim(self.values) == 0 else self.values)
        if values.shape != self.grid.shape:
            raise GridError(
                f"Cell field shape {values.shape} does not match grid {self.grid.shape}"
            )
        if self.role is FieldRole.POROSITY and not np.all((values > 0.0) & (values < 1.0)):
            raise GridError("Porosity fields must lie strictly inside (0, 1)")
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(
        cls, grid: StaggeredGrid, value: float, role: FieldRole = FieldRole.GENERIC
    ) -> "CellField":
        return cls(grid, np.full(grid.shape, float(value)), role)

    @classmethod
    def from_function(
        cls,
        grid: StaggeredGrid,
        func: Callable[..., np.ndarray],
        role: FieldRole = FieldRole.GENERIC,
    ) -> "CellField":
        """Sample ``func(x, y[, z])`` pointwise at cell centres."""

        values = np.broadcast_to(func(*grid.cell_coordinates()), grid.shape)
        return cls(grid, values, role)

    def with_values(self, values: np.ndarray) -> "CellField":
        return CellField(self.grid, values, self.role)

    def flat(self) -> np.ndarray:
        return self.values.ravel(order="F")


@dataclass(frozen=True, slots=True)
class FaceField:
    grid: StaggeredGrid
    components: tuple[np.ndarray, ...]
    role: FieldRole = FieldRole.GENERIC

    def __post_init__(self) -> None:
        if len(self.components) != self.grid.dim:
            raise GridError(
                f"Face field needs {self.grid.dim} components, got {len(self.components)}"
            )
        frozen = []
        for axis, component in enumerate(self.components):
            array = _frozen(component)
            if array.shape != self.grid.face_shape(axis):
                raise GridError(
                    f"{AXIS_NAMES[axis]}-face component shape {array.shape} "
                    f"does not match {self.grid.face_shape(axis)}"
                )
            frozen.append(array)
        object.__setattr__(self, "components", tuple(frozen))

    @classmethod
    def zeros(cls, grid: StaggeredGrid, role: FieldRole = FieldRole.GENERIC) -> "FaceField":
        return cls(grid, tuple(np.zeros(grid.face_shape(a)) for a in range(grid.dim)), role)

    @classmethod
    def single(
        cls,
        grid: StaggeredGrid,
        axis: int,
        values: np.ndarray,
        role: FieldRole = FieldRole.GENERIC,
    ) -> "FaceField":
        """Face field with only ``axis`` populated; other components are zero."""

        axis = grid.check_axis(axis)
        components = [
            values if a == axis else np.zeros(grid.face_shape(a)) for a in range(grid.dim)
        ]
        return cls(grid, tuple(components), role)

    def component(self, axis: int) -> np.ndarray:
        return self.components[self.grid.check_axis(axis)]

    def boundary_faces(self, axis: int) -> tuple[np.ndarray, np.ndarray]:
        values = self.component(axis)
        n = values.shape[axis]
        return np.take(values, 0, axis=axis), np.take(values, n - 1, axis=axis)

    def has_zero_boundary(self) -> bool:
        return all(
            not np.any(lo) and not np.any(hi)
            for lo, hi in (self.boundary_faces(a) for a in range(self.grid.dim))
        )


def _same_grid(*fields: CellField | FaceField) -> StaggeredGrid:
    grid = fields[0].grid
    for other in fields[1:]:
        if other.grid != grid:
            raise GridError("Fields are defined on different grids")
    return grid


def _pad_boundary_faces(interior: np.ndarray, axis: int) -> np.ndarray:
    pad = [(0, 0)] * interior.ndim
    pad[axis] = (1, 1)
    return np.pad(interior, pad)


def _interior(values: np.ndarray, axis: int) -> np.ndarray:
    n = values.shape[axis]
    return np.take(values, np.arange(1, n - 1), axis=axis)


def d_face(f: CellField, axis: int) -> FaceField:
    """Two-point difference quotient at interior faces; boundary faces are zero."""

    grid = f.grid
    axis = grid.check_axis(axis)
    interior = np.diff(f.values, axis=axis) / grid.spacing[axis]
    return FaceField.single(grid, axis, _pad_boundary_faces(interior, axis))


def gradient(f: CellField) -> FaceField:
    grid = f.grid
    return FaceField(
        grid, tuple(d_face(f, axis).component(axis) for axis in range(grid.dim))
    )


def D_cell(w: FaceField, axis: int) -> CellField:  # noqa: N802 - operator name
    """Per-cell divergence contribution of the ``axis`` component of ``w``."""

    grid = w.grid
    axis = grid.check_axis(axis)
    return CellField(grid, np.diff(w.component(axis), axis=axis) / grid.spacing[axis])


def divergence(w: FaceField) -> CellField:
    grid = w.grid
    total_div = sum(
        np.diff(w.component(axis), axis=axis) / grid.spacing[axis] for axis in range(grid.dim)
    )
    return CellField(grid, total_div)


def interp_face(f: CellField, axis: int) -> FaceField:
    """Face interpolation: mean of the two neighbours, adjacent value on boundaries."""

    grid = f.grid
    axis = grid.check_axis(axis)
    values = f.values
    n = values.shape[axis]
    first = np.take(values, [0], axis=axis)
    last = np.take(values, [n - 1], axis=axis)
    lo = np.take(values, np.arange(0, n - 1), axis=axis)
    hi = np.take(values, np.arange(1, n), axis=axis)
    faces = np.concatenate([first, 0.5 * (lo + hi), last], axis=axis)
    return FaceField.single(grid, axis, faces, f.role)


def interpolate(f: CellField) -> FaceField:
    grid = f.grid
    return FaceField(
        grid, tuple(interp_face(f, axis).component(axis) for axis in range(grid.dim)), f.role
    )


def dt_quotient(f_new: CellField, f_old: CellField, dt: float) -> CellField:
    if not dt > 0:
        raise GridError(f"Time step must be positive, got {dt!r}")
    grid = _same_grid(f_new, f_old)
    return CellField(grid, (f_new.values - f_old.values) / dt)


def inner_M(f: CellField, g: CellField) -> float:  # noqa: N802 - operator name
    grid = _same_grid(f, g)
    return float(grid.cell_volume * np.sum(f.values * g.values))


def norm_M(f: CellField) -> float:  # noqa: N802
    return math.sqrt(inner_M(f, f))


def total(f: CellField) -> float:
    """``(f, 1)_M``: the discrete integral of a cell field."""

    return float(f.grid.cell_volume * np.sum(f.values))


def inner_face(v: FaceField, w: FaceField, axis: int) -> float:
    """Face inner product over interior faces normal to ``axis``."""

    grid = _same_grid(v, w)
    axis = grid.check_axis(axis)
    product = _interior(v.component(axis), axis) * _interior(w.component(axis), axis)
    return float(grid.cell_volume * np.sum(product))


def inner_x(v: FaceField, w: FaceField) -> float:
    return inner_face(v, w, 0)


def inner_y(v: FaceField, w: FaceField) -> float:
    return inner_face(v, w, 1)


def inner_z(v: FaceField, w: FaceField) -> float:
    return inner_face(v, w, 2)


def inner_TM(v: FaceField, w: FaceField) -> float:  # noqa: N802
    grid = _same_grid(v, w)
    return sum(inner_face(v, w, axis) for axis in range(grid.dim))


def norm_TM(v: FaceField) -> float:  # noqa: N802
    return math.sqrt(inner_TM(v, v))
