"""Desk-scale experiments shared by ``scripts/`` and the acceptance tests.

* :func:`run_disk_star`: a disk morphed towards a five-lobed star, with and
  without the global angle constraint.
* :func:`run_ball_squeeze`: a ball flattened along one axis under the
  relative solid-angle policy.
* :func:`circle_line_problem`: two variables, a disk constraint and a
  half-plane constraint, used to watch constraints activate and drop.

Every run re-evaluates all cell angles from scratch at each accepted
iterate (independently of the optimizer's own bookkeeping) and stores them
in :attr:`ExperimentRun.min_angles` and :attr:`ExperimentRun.min_ratios`.
"""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np

from meshguard.elasticity import ElasticityParams
from meshguard.functionals import FunctionalSpec, Perimeter, ReferenceShape, TargetDistance
from meshguard.meshgen import ball, disk
from meshguard.optimizer import EuclideanProblem, OptimizerOptions, OptimizerResult, gradient_projection, optimize_shape
from meshguard.projection import FunctionConstraints
from meshguard.quality import ConstraintSystem, ThresholdPolicy, build_thresholds, cell_angles


@dataclasses.dataclass
class DiskStarConfig:
    n_rings: int = 18  # 1944 triangles
    star_amplitude: float = 0.5
    lobes: int = 5
    perimeter_weight: float = 0.01
    delta_elas: float = 1.0
    alpha_thr_deg: float = 25.0
    epsilon: float = 1e-2
    n_max: int = 100
    tau: float = 1e-6


@dataclasses.dataclass
class BallSqueezeConfig:
    n: int = 9  # 4374 tetrahedra
    squeeze_amplitude: float = 0.9
    axis: int = 2
    nu: float = 0.25
    delta_elas: float = 1.0
    # absolute activity tolerance; must stay well below the smallest relative
    # threshold (about 3.5e-3 sr on this mesh)
    epsilon: float = 1e-4
    n_max: int = 60
    tau: float = 1e-6


@dataclasses.dataclass
class ExperimentRun:
    result: OptimizerResult
    thresholds: np.ndarray | None  # per cell
    min_angles: np.ndarray  # per accepted iterate
    min_ratios: np.ndarray  # min over cells of angle / threshold, per iterate
    seconds: float

    @property
    def final_value(self) -> float:
        return self.result.records[-1]["J"]


def _run(mesh, spec, params, constraints, options, per_cell_thr, extra=None) -> ExperimentRun:
    mins, ratios = [], []

    def callback(n, x, record):
        angles = cell_angles(mesh, x).min(axis=1)
        mins.append(angles.min())
        ratios.append((angles / per_cell_thr).min())
        if extra is not None:
            extra(n, x, record)

    start = time.perf_counter()
    result = optimize_shape(mesh, spec, params=params, constraints=constraints, options=options, callback=callback)
    return ExperimentRun(result, per_cell_thr, np.array(mins), np.array(ratios), time.perf_counter() - start)


def disk_star_problem(cfg: DiskStarConfig = DiskStarConfig()):
    mesh = disk(cfg.n_rings)
    spec = FunctionalSpec(
        (
            TargetDistance(ReferenceShape("star", radius=1.0, amplitude=cfg.star_amplitude, lobes=cfg.lobes)),
            Perimeter(cfg.perimeter_weight),
        )
    )
    return mesh, spec, ElasticityParams(delta_elas=cfg.delta_elas)


def run_disk_star(cfg: DiskStarConfig = DiskStarConfig(), constraints: bool = True, callback=None) -> ExperimentRun:
    """Disk-to-star run; ``callback(n, x, record)`` is forwarded to the optimizer."""
    mesh, spec, params = disk_star_problem(cfg)
    policy = ThresholdPolicy("global", alpha_thr=math.radians(cfg.alpha_thr_deg))
    system = ConstraintSystem.from_policy(mesh, policy, (), cfg.epsilon) if constraints else None
    options = OptimizerOptions(n_max=cfg.n_max, tau=cfg.tau, epsilon=cfg.epsilon)
    thr = np.full(mesh.cell_count, policy.alpha_thr)
    return _run(mesh, spec, params, system, options, thr, callback)


def ball_squeeze_problem(cfg: BallSqueezeConfig = BallSqueezeConfig()):
    mesh = ball(cfg.n)
    spec = FunctionalSpec((TargetDistance(ReferenceShape("squeeze", amplitude=cfg.squeeze_amplitude, axis=cfg.axis)),))
    return mesh, spec, ElasticityParams(delta_elas=cfg.delta_elas)


def run_ball_squeeze(cfg: BallSqueezeConfig = BallSqueezeConfig(), constraints: bool = True, callback=None) -> ExperimentRun:
    mesh, spec, params = ball_squeeze_problem(cfg)
    policy = ThresholdPolicy("relative", nu=cfg.nu)
    thr = build_thresholds(mesh, policy)[:: mesh.dim + 1]
    system = ConstraintSystem(mesh, np.repeat(thr, mesh.dim + 1), (), cfg.epsilon) if constraints else None
    options = OptimizerOptions(n_max=cfg.n_max, tau=cfg.tau, epsilon=cfg.epsilon)
    return _run(mesh, spec, params, system, options, thr, callback)


# ---------------------------------------------------------------------------
# two-variable problem


CIRCLE_LINE_TARGET = np.array([3.0, 3.2])
CIRCLE_LINE_START = np.array([0.0, 2.9])


def circle_line_problem() -> EuclideanProblem:
    """``min |x - c|^2 / 2`` s.t. ``g1 = |x|^2 - 9 <= 0`` and ``g2 = x1 + x2 - 3.5 <= 0``.

    With ``c = (3, 3.2)`` and start ``(0, 2.9)`` the iterates reach the
    circle first, slide along it until the line is hit, then leave the
    circle and converge to the foot of ``c`` on the line, ``(1.65, 1.85)``.
    """
    c = CIRCLE_LINE_TARGET
    constraints = FunctionConstraints(
        [lambda x: float(x @ x) - 9.0, lambda x: float(x[0] + x[1]) - 3.5],
        [lambda x: 2.0 * np.asarray(x, dtype=float), lambda x: np.array([1.0, 1.0])],
    )
    return EuclideanProblem(lambda x: 0.5 * float((x - c) @ (x - c)), lambda x: x - c, constraints)


def brute_force_minimizer(problem: EuclideanProblem, box=((-3.0, 3.0), (-3.0, 3.0)), n: int = 201, rounds: int = 7):
    """Feasible grid minimizer, refined by repeatedly shrinking the grid around the best point."""
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    best = None
    for _ in range(rounds):
        xs = np.linspace(lo[0], hi[0], n)
        ys = np.linspace(lo[1], hi[1], n)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        g = np.array([[f(p) for f in problem.constraints.functions] for p in pts])
        feasible = (g <= 0.0).all(axis=1)
        vals = np.where(feasible, [problem.value(p) for p in pts], np.inf)
        best = pts[int(np.argmin(vals))]
        width = (hi - lo) / (n - 1) * 4
        lo, hi = best - width, best + width
    return best


# kkt_tol stays above the rounding floor of the Armijo test on this problem
CIRCLE_LINE_OPTIONS = OptimizerOptions(tau=0.0, n_max=200, epsilon=1e-3, kkt_tol=1e-7)


def run_circle_line(options: OptimizerOptions = CIRCLE_LINE_OPTIONS, callback=None) -> OptimizerResult:
    return gradient_projection(circle_line_problem(), CIRCLE_LINE_START, options, callback)
