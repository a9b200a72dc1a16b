"""Command-line driver: ``run``, ``converge`` and ``check``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import NoReturn, Sequence

import numpy as np

from .config import settings
from .constitutive import (
    PhysParams,
    interfacial_area,
    interfacial_area_from_porosity,
    permeability,
    reaction_rate,
    reaction_rate_closed,
)
from .grid import CellField, D_cell, FaceField, GridError, StaggeredGrid, d_face, inner_M, inner_face
from .linsolve import DiagonalDominanceError, SolverConvergenceError
from .logging_utils import record_run_error
from .mms import boundary_compatibility, get_case, manufactured_residuals, run_convergence_study
from .output import FORMATS
from .scenarios import ConfigError, load_scenario, run_scenario
from .stepper import InvalidMediumError, InvariantViolation

__all__ = [
    "EXIT_CONFIG",
    "EXIT_INVARIANT",
    "EXIT_OK",
    "EXIT_SOLVER",
    "EXIT_USAGE",
    "main",
    "self_checks",
]

logger = logging.getLogger("wormhole_heat.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INVARIANT = 4

RESIDUAL_GATE = 1e-6
ADJOINT_TOL = 1e-12
DUAL_FORM_TOL = 1e-12
BOUNDARY_TOL = 1e-12


class _ArgumentParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with :data:`EXIT_USAGE`."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _mesh_list(value: str) -> list[int]:
    try:
        meshes = [int(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"meshes must be comma-separated integers, got {value!r}")
    if not meshes:
        raise argparse.ArgumentTypeError("at least one mesh is required")
    return meshes


def _format_list(value: str) -> tuple[str, ...]:
    formats = tuple(item.strip().lower() for item in value.split(",") if item.strip())
    unknown = sorted(set(formats) - set(FORMATS))
    if not formats or unknown:
        raise argparse.ArgumentTypeError(
            f"formats must be a comma-separated subset of {','.join(FORMATS)}, got {value!r}"
        )
    return formats


def _build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="wormhole-heat",
        description="Acid wormhole propagation with heat transmission on a staggered grid",
    )
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    run = commands.add_parser("run", help="Run a dissolution scenario (preset name or TOML file)")
    run.add_argument("scenario", help="example3, example4, example5 or a path to a TOML file")
    run.add_argument("--output", type=Path, help="Output directory (default: OUTPUT_DIR/<name>)")
    run.add_argument("--snapshots", type=int, help="Number of evenly spaced snapshots")
    run.add_argument(
        "--formats",
        type=_format_list,
        help="Comma-separated snapshot formats (csv, vtk); defaults to SNAPSHOT_FORMATS",
    )
    run.add_argument("--max-steps", type=int, help="Stop after this many steps")

    converge = commands.add_parser("converge", help="Manufactured-solution convergence study")
    converge.add_argument("case", choices=["example1", "example2"])
    converge.add_argument(
        "--meshes", type=_mesh_list, default=[10, 20, 40], help="Cells per axis, e.g. 10,20,40"
    )
    converge.add_argument(
        "--jobs", type=int, default=None, help="Worker processes (default CONVERGENCE_WORKERS)"
    )
    converge.add_argument("--csv", type=Path, help="Also write the table as CSV to this path")

    check = commands.add_parser("check", help="Run the operator and source self-checks")
    check.add_argument("--seed", type=int, default=20240601, help="Random seed")
    return parser


def _adjoint_defect(rng: np.random.Generator, dim: int) -> float:
    """Worst relative defect of ``(q, D w)_M = -(d q, w)`` over random fields."""

    grid = StaggeredGrid.cube(0.0, 1.0, 7, dim)
    worst = 0.0
    for axis in range(dim):
        q = CellField(grid, rng.standard_normal(grid.shape))
        faces = rng.standard_normal(grid.face_shape(axis))
        index: list[slice | int] = [slice(None)] * dim
        for end in (0, -1):
            index[axis] = end
            faces[tuple(index)] = 0.0
        w = FaceField.single(grid, axis, faces)
        div = D_cell(w, axis)
        lhs = inner_M(q, div)
        rhs = -inner_face(d_face(q, axis), w, axis)
        scale = grid.cell_volume * float(np.sum(np.abs(q.values * div.values)))
        worst = max(worst, abs(lhs - rhs) / max(scale, 1e-300))
    return worst


def _dual_form_defect(rng: np.random.Generator) -> float:
    params = PhysParams.realistic()
    phi = rng.uniform(0.05, 0.95, 1000)
    phi0 = rng.uniform(0.05, 0.95, 1000)
    k = permeability(phi, phi0, 1e-8, guard=False)
    area = interfacial_area(phi, phi0, params.a0, k, 1e-8)
    closed = interfacial_area_from_porosity(phi, phi0, params.a0)
    conc = rng.uniform(0.0, 1e3, 1000)
    temp = rng.uniform(280.0, 360.0, 1000)
    r1 = reaction_rate(conc, temp, params)
    r2 = reaction_rate_closed(conc, temp, params)
    return float(
        max(
            np.max(np.abs(area - closed) / np.abs(closed)),
            np.max(np.abs(r1 - r2) / np.maximum(np.abs(r2), 1e-300)),
        )
    )


def self_checks(seed: int = 20240601) -> dict[str, tuple[float, float]]:
    """Return ``{check: (value, limit)}`` for every self-check."""

    rng = np.random.default_rng(seed)
    results = {
        "adjoint_2d": (_adjoint_defect(rng, 2), ADJOINT_TOL),
        "adjoint_3d": (_adjoint_defect(rng, 3), ADJOINT_TOL),
        "constitutive_dual_forms": (_dual_form_defect(rng), DUAL_FORM_TOL),
    }
    for name in ("example1", "example2"):
        case = get_case(name)
        residuals = manufactured_residuals(case, samples=40 if case.dim == 2 else 12)
        results[f"{name}_residual"] = (max(residuals.values()), RESIDUAL_GATE)
        results[f"{name}_boundary"] = (boundary_compatibility(case, samples=16), BOUNDARY_TOL)
    return results


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_scenario(args.scenario)
    summary = run_scenario(
        config,
        output_dir=args.output,
        snapshots=args.snapshots,
        formats=args.formats,
        max_steps=args.max_steps,
    )
    print(
        f"{summary.scenario}: {summary.steps} steps, average porosity "
        f"{summary.initial_average_porosity:.9f} -> {summary.final_average_porosity:.9f}, "
        f"seeds {', '.join(f'{v:.6f}' for v in summary.seed_porosity)} "
        f"vs background {summary.background_porosity:.6f}; output in {summary.output_dir}"
    )
    return EXIT_OK


def _cmd_converge(args: argparse.Namespace) -> int:
    report = run_convergence_study(args.case, args.meshes, workers=args.jobs)
    print(report.to_text(), end="")
    if args.csv:
        args.csv.parent.mkdir(parents=True, exist_ok=True)
        args.csv.write_text(report.to_csv(), encoding="utf-8")
    return EXIT_OK


def _cmd_check(args: argparse.Namespace) -> int:
    failed = []
    for name, (value, limit) in self_checks(args.seed).items():
        ok = value <= limit
        print(f"{'PASS' if ok else 'FAIL'} {name}: {value:.3e} (limit {limit:.0e})")
        if not ok:
            failed.append(name)
    if failed:
        record_run_error(source="cli.check", message=f"self-checks failed: {', '.join(failed)}")
        return EXIT_INVARIANT
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "converge": _cmd_converge, "check": _cmd_check}


def main(argv: Sequence[str] | None = None) -> int:
    """CLI entrypoint; returns the process exit code."""

    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    logger.debug("Running %s with settings %s", args.command, settings.describe())
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, GridError, InvalidMediumError) as exc:
        code, label = EXIT_CONFIG, "configuration"
        error: Exception = exc
    except (SolverConvergenceError, DiagonalDominanceError) as exc:
        code, label = EXIT_SOLVER, "solver"
        error = exc
    except InvariantViolation as exc:
        code, label = EXIT_INVARIANT, "invariant"
        error = exc

    logger.error("%s error: %s", label, error)
    record_run_error(source=f"cli.{args.command}", message=f"{label} error", exception=error)
    print(f"error: {error}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover - runtime behaviour
    sys.exit(main(sys.argv[1:]))
