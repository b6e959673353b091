"""Command-line front end: ``meshguard check | project | optimize``.

Exit codes: 0 success (or feasible mesh), 1 infeasible mesh or failed
optimization, 2 usage or configuration error. Set ``MESHGUARD_LOG`` to a
logging level name (e.g. ``INFO``) for progress output on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
import threadpoolctl

from meshguard import __version__
from meshguard import projection as proj
from meshguard.config import ConfigError, RunConfig, read_field, write_field
from meshguard.mesh import MeshError, SimplicialMesh, atomic_write_text, load_mesh, save_mesh
from meshguard.optimizer import OptimizerResult, optimize_shape
from meshguard.quality import (
    ConstraintSystem,
    InfeasibleMeshError,
    ThresholdPolicy,
    build_thresholds,
    cell_angles,
    quality_report,
    write_quality_csv,
)

logger = logging.getLogger("meshguard")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2
SUCCESS_REASONS = ("kkt", "gradient_tolerance", "max_iterations")


class UsageError(Exception):
    pass


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_mesh(path) -> SimplicialMesh:
    if path is None:
        raise UsageError("--mesh is required")
    if not Path(path).is_file():
        raise UsageError(f"mesh file not found: {path}")
    return load_mesh(path)


def _policy_from_args(args, config: RunConfig | None) -> ThresholdPolicy:
    spec = dict(config.threshold) if config else {"kind": "global", "alpha_thr": math.radians(25.0)}
    if args.policy is not None:
        spec["kind"] = args.policy
    if args.alpha_thr is not None:
        spec["alpha_thr"] = args.alpha_thr
    if args.nu is not None:
        spec["nu"] = args.nu
    try:
        return ThresholdPolicy(**spec)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid threshold policy: {exc}") from exc


def _output_dir(args, config: RunConfig | None) -> Path:
    out = Path(args.output_dir or (config.output_dir if config else "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# check


def cmd_check(args) -> int:
    config = RunConfig.load(args.config) if args.config else None
    mesh = _load_mesh(args.mesh or (config.mesh_path if config else None))
    policy = _policy_from_args(args, config)
    try:
        policy.check_dimension(mesh.dim)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    report = quality_report(mesh)
    feasible, worst = True, None
    try:
        build_thresholds(mesh, policy)
    except InfeasibleMeshError as exc:
        feasible, worst = False, exc
    summary = {
        "cells": int(mesh.cell_count),
        "min_angle": float(report["min_angle"].min()),
        "max_aspect_ratio": float(report["aspect_ratio"].max()),
        "feasible_under_policy": feasible,
        "policy": {"kind": policy.kind, "alpha_thr": policy.alpha_thr, "nu": policy.nu},
    }
    if worst is not None:
        summary["worst_cell"] = worst.cell
    out = _output_dir(args, config)
    write_quality_csv(report, out / "quality.csv")
    atomic_write_text(out / "summary.json", _json(summary))
    if not feasible:
        print(f"infeasible: {worst}", file=sys.stderr)
        return EXIT_FAILED
    print(f"feasible: min angle {summary['min_angle']:.6f}, max aspect ratio {summary['max_aspect_ratio']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# project


def cmd_project(args) -> int:
    config = RunConfig.load(args.config) if args.config else None
    mesh = _load_mesh(args.mesh or (config.mesh_path if config else None))
    if args.field is None:
        raise UsageError("--field is required")
    policy = _policy_from_args(args, config)
    groups = args.fixed_groups if args.fixed_groups is not None else (config.fixed_boundary_groups if config else [])
    epsilon = args.epsilon if args.epsilon is not None else (config.epsilon if config else 1e-2)
    try:
        fixed = mesh.boundary_nodes(*groups)
    except KeyError as exc:
        raise UsageError(str(exc)) from exc
    s = read_field(args.field, mesh)
    try:
        system = ConstraintSystem.from_policy(mesh, policy, fixed, epsilon)
    except InfeasibleMeshError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_FAILED
    x = mesh.coords
    g = system.evaluate(x)
    active = proj.find_active(system, g, epsilon)
    jac = proj.assemble_jacobian(system, x, active)
    p, lam = proj.project_direction(jac, s)
    out = _output_dir(args, config)
    write_field(out / "projected.txt", p, mesh.dim)
    lines = "".join(f"{int(k)} {v:.17g}\n" for k, v in zip(active, lam))
    atomic_write_text(out / "multipliers.txt", "# constraint_row multiplier\n" + lines)
    tangency = float(np.abs(jac.matrix @ p).max(initial=0.0))
    print(f"projected onto {active.size} active constraints; max |A p| = {tangency:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# optimize


def run_optimization(config: RunConfig, constraints_enabled: bool | None = None, write_every: int = 0):
    """Load the mesh, optimize and write all artifacts; returns the result.

    Everything is validated before any output is written. The final mesh,
    quality report, JSON-lines log and summary are written at the end;
    snapshots (``write_every > 0``) as the run proceeds.
    """
    enabled = config.constraints_enabled if constraints_enabled is None else constraints_enabled
    mesh = _load_mesh(config.mesh_path)
    config.validate_for_mesh(mesh)
    fixed = mesh.boundary_nodes(*config.fixed_boundary_groups)
    constraints = None
    if enabled:
        constraints = ConstraintSystem.from_policy(mesh, config.policy(), fixed, config.epsilon)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    callback = None
    if write_every > 0:
        snapdir = out / "snapshots"
        snapdir.mkdir(exist_ok=True)

        def callback(n, x, record):
            if n % write_every == 0:
                save_mesh(mesh.with_coords(x), snapdir / f"iter_{n:05d}.msh")

    result = optimize_shape(
        mesh,
        config.functional_spec(),
        params=config.elasticity_params(),
        fixed_nodes=fixed,
        constraints=constraints,
        options=config.options(),
        callback=callback,
    )
    _write_results(out, config, result, enabled)
    return result


def _write_results(out: Path, config: RunConfig, result: OptimizerResult, enabled: bool) -> None:
    save_mesh(result.mesh, out / "final.msh")
    write_quality_csv(quality_report(result.mesh), out / "quality.csv")
    atomic_write_text(out / "log.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in result.records))
    first, last = result.records[0], result.records[-1]
    summary = {
        "termination_reason": result.reason,
        "iterations": result.iterations,
        "J_initial": first["J"],
        "J_final": last["J"],
        "min_angle_over_run": min(r["min_angle"] for r in result.records),
        "final_min_angle": float(cell_angles(result.mesh).min()),
        "constraints_enabled": enabled,
        "config": config.to_dict(),
    }
    atomic_write_text(out / "summary.json", _json(summary))


def cmd_optimize(args) -> int:
    if not args.config:
        raise UsageError("--config is required")
    config = RunConfig.load(args.config)
    if args.mesh:
        config.mesh_path = args.mesh
    if args.output_dir:
        config.output_dir = args.output_dir
    enabled = False if args.no_constraints else None
    try:
        result = run_optimization(config, enabled, args.write_every)
    except InfeasibleMeshError as exc:
        print(f"infeasible initial mesh ({config.mesh_path}): {exc}", file=sys.stderr)
        return EXIT_FAILED
    except (proj.OverConstrainedError, proj.MultiplierSolveError) as exc:
        print(f"optimization failed ({args.config}): {exc}", file=sys.stderr)
        return EXIT_FAILED
    last = result.records[-1]
    print(f"{result.reason} after {result.iterations} iterations: J = {last['J']:.6e}")
    return EXIT_OK if result.reason in SUCCESS_REASONS else EXIT_FAILED


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshguard", description="Quality-constrained shape optimization.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--mesh", help="Gmsh MSH 2.2 ASCII mesh file")
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--output-dir", help="directory for output files")
    common.add_argument("--threads", type=int, default=1, help="cap on worker threads (1 = bitwise reproducible)")
    policy = argparse.ArgumentParser(add_help=False)
    policy.add_argument("--policy", choices=("global", "relative", "combined"))
    policy.add_argument("--alpha-thr", type=float, help="global threshold angle in radians (default 25 degrees)")
    policy.add_argument("--nu", type=float, help="relative tolerance")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", parents=[common, policy], help="mesh quality report and feasibility check")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("project", parents=[common, policy], help="project a deformation field")
    p.add_argument("--field", help="deformation field: one line per node with d numbers")
    p.add_argument("--epsilon", type=float, help="activity tolerance")
    p.add_argument("--fixed-groups", nargs="*", help="boundary groups whose nodes are fixed")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("optimize", parents=[common], help="run a shape optimization")
    p.add_argument("--write-every", type=int, default=0, metavar="N", help="write a mesh snapshot every N iterations")
    p.add_argument("--no-constraints", action="store_true", help="disable the quality constraints")
    p.set_defaults(func=cmd_optimize)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("MESHGUARD_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    logging.captureWarnings(True)


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threadpoolctl.threadpool_limits(limits=args.threads):
            return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MeshError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
