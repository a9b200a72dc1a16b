"""Snapshot files: per-cell CSV tables and legacy-VTK structured points.

Both formats list cells with the x index running fastest.  CSV columns are the
zero-based cell indices, the cell-centre coordinates and then one column per
scalar field in :data:`SCALAR_FIELDS` order.  VTK files carry the same scalars
as ``CELL_DATA`` arrays in that order, followed by a ``VECTORS velocity`` array
of face-averaged cell velocities when a velocity field is present.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Literal, Mapping

import numpy as np

from .grid import AXIS_NAMES, FaceField, StaggeredGrid
from .stepper import SimState

__all__ = [
    "FORMATS",
    "SCALAR_FIELDS",
    "SnapshotMeta",
    "SnapshotSet",
    "cell_velocity",
    "write_csv",
    "write_snapshot",
    "write_vtk",
]

logger = logging.getLogger("wormhole_heat.output")

SCALAR_FIELDS = ("porosity", "pressure", "concentration", "temperature")

SnapshotFormat = Literal["csv", "vtk"]


def _number(value: float) -> str:
    return format(float(value), ".17g")


@dataclass(frozen=True, slots=True)
class SnapshotMeta:
    scenario: str
    step: int
    time: float
    grid: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True, slots=True)
class SnapshotSet:
    grid: StaggeredGrid
    meta: SnapshotMeta
    cells: Mapping[str, np.ndarray]
    velocity: FaceField | None = field(default=None)

    def __post_init__(self) -> None:
        if not self.cells:
            raise ValueError("A snapshot needs at least one cell field")
        for name, values in self.cells.items():
            if np.shape(values) != self.grid.shape:
                raise ValueError(f"Field {name!r} does not match grid shape {self.grid.shape}")
            if not np.all(np.isfinite(values)):
                raise ValueError(f"Field {name!r} contains non-finite values")
        porosity = self.cells.get("porosity")
        if porosity is not None and not np.all((porosity > 0.0) & (porosity < 1.0)):
            raise ValueError("Snapshot porosity must lie strictly inside (0, 1)")

    @classmethod
    def from_state(
        cls,
        state: SimState,
        scenario: str,
        fields: tuple[str, ...] = SCALAR_FIELDS,
    ) -> "SnapshotSet":
        cells = {name: getattr(state, name).values for name in fields}
        meta = SnapshotMeta(scenario, state.step, state.time, state.grid.describe())
        return cls(state.grid, meta, cells, state.velocity)


def cell_velocity(velocity: FaceField) -> np.ndarray:
    """Average of the two bounding faces per axis, shape ``cells + (dim,)``."""

    grid = velocity.grid
    parts = []
    for axis in range(grid.dim):
        faces = velocity.component(axis)
        n = faces.shape[axis]
        lower = np.take(faces, np.arange(n - 1), axis=axis)
        upper = np.take(faces, np.arange(1, n), axis=axis)
        parts.append(0.5 * (lower + upper))
    return np.stack(parts, axis=-1)


def _flat(values: np.ndarray) -> np.ndarray:
    return np.asarray(values).ravel(order="F")


def write_csv(snapshot: SnapshotSet, path: Path) -> Path:
    grid = snapshot.grid
    index_names = ["i", "j", "l"][: grid.dim]
    coord_names = list(AXIS_NAMES[: grid.dim])
    names = list(snapshot.cells)

    indices = [_flat(ix) for ix in np.meshgrid(*(np.arange(n) for n in grid.shape), indexing="ij")]
    coords = [_flat(x) for x in grid.cell_coordinates()]
    columns = [_flat(snapshot.cells[name]) for name in names]

    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(index_names + coord_names + names)
        for row in range(grid.size):
            writer.writerow(
                [int(ix[row]) for ix in indices]
                + [_number(x[row]) for x in coords]
                + [_number(col[row]) for col in columns]
            )
    return path


def write_vtk(snapshot: SnapshotSet, path: Path) -> Path:
    grid = snapshot.grid
    meta = snapshot.meta
    dims = [n + 1 for n in grid.shape] + [1] * (3 - grid.dim)
    origin = list(grid.lower) + [0.0] * (3 - grid.dim)
    spacing = list(grid.spacing) + [1.0] * (3 - grid.dim)

    lines = [
        "# vtk DataFile Version 3.0",
        f"wormhole_heat {meta.scenario} step={meta.step} time={_number(meta.time)}",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS " + " ".join(str(d) for d in dims),
        "ORIGIN " + " ".join(_number(v) for v in origin),
        "SPACING " + " ".join(_number(v) for v in spacing),
        f"CELL_DATA {grid.size}",
    ]
    for name, values in snapshot.cells.items():
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_number(v) for v in _flat(values))

    if snapshot.velocity is not None:
        vectors = cell_velocity(snapshot.velocity).reshape(grid.size, grid.dim, order="F")
        lines.append("VECTORS velocity double")
        for row in vectors:
            padded = list(row) + [0.0] * (3 - grid.dim)
            lines.append(" ".join(_number(v) for v in padded))

    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


_WRITERS = {"csv": write_csv, "vtk": write_vtk}
FORMATS: tuple[str, ...] = tuple(_WRITERS)


def write_snapshot(
    snapshot: SnapshotSet,
    directory: Path,
    fmt: SnapshotFormat = "csv",
    *,
    stem: str = "snapshot",
) -> Path:
    """Write ``snapshot`` as ``<stem>_<step>.<fmt>`` under ``directory``."""

    try:
        writer = _WRITERS[fmt]
    except KeyError:
        raise ValueError(f"Unknown snapshot format {fmt!r}; choose from {sorted(_WRITERS)}") from None
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{stem}_{snapshot.meta.step:05d}.{fmt}"
    writer(snapshot, path)
    logger.info("Wrote %s snapshot for step %d to %s", fmt, snapshot.meta.step, path)
    return path
