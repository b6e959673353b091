"""Gradient-based descent with gradient projection onto active constraints.

One loop serves both plain finite-dimensional problems
(:class:`EuclideanProblem`) and mesh-based shape optimization
(:class:`ShapeProblem`). A problem supplies

* ``value(x)`` and ``derivative(x)`` (the objective and its derivative ``b``),
* ``riesz(x, b) -> (G, inner)``: the gradient representative ``G`` in the
  problem's inner product and that inner product,
* ``constraints``: a constraint container (see :mod:`meshguard.projection`)
  or ``None``,
* optionally ``admissible(x)`` and ``metrics(x)``.

Each iteration projects the search direction onto the tangent space of the
active constraints, caps the step by the largest feasible step, and runs an
Armijo backtracking search on back-projected trial points.
"""

from __future__ import annotations

import collections
import dataclasses
import logging
import math
from typing import Callable, Iterable

import numpy as np

from meshguard import projection as proj
from meshguard.elasticity import ElasticityParams, assemble_stiffness, fixed_dofs, gradient_deformation
from meshguard.functionals import FunctionalSpec, ShapeFunctional
from meshguard.mesh import SimplicialMesh, cell_measures
from meshguard.quality import ConstraintSystem, aspect_ratios, cell_angles

logger = logging.getLogger(__name__)


@dataclasses.dataclass
class OptimizerOptions:
    method: str = "gd"  # "gd" or "lbfgs"
    lbfgs_memory: int = 5
    t0: float = 1.0
    sigma: float = 1e-4
    omega: float = 0.5
    tau: float = 1e-3
    n_max: int = 100
    epsilon: float = 1e-2
    kkt_tol: float = 1e-8
    newton_max: int = proj.NEWTON_MAX
    bisect_max: int = proj.BISECT_MAX
    bisect_rtol: float = proj.BISECT_RTOL
    t_min_factor: float = proj.T_MIN_FACTOR

    def __post_init__(self) -> None:
        if self.method not in ("gd", "lbfgs"):
            raise ValueError(f"unknown method {self.method!r}")
        if not 0 < self.sigma < 1 or not 0 < self.omega < 1:
            raise ValueError("Armijo parameters sigma and omega must lie in (0, 1)")
        if not self.t0 > 0:
            raise ValueError("initial step size must be positive")
        if not 0 <= self.tau <= 1:
            raise ValueError("stopping tolerance tau must lie in [0, 1]")
        if self.n_max < 0 or self.lbfgs_memory < 1:
            raise ValueError("n_max must be >= 0 and lbfgs_memory >= 1")
        if not self.epsilon > 0:
            raise ValueError("activity tolerance epsilon must be positive")


class LBFGSMemory:
    """Two-loop recursion in an arbitrary inner product."""

    def __init__(self, size: int) -> None:
        self.pairs: collections.deque = collections.deque(maxlen=size)

    def __len__(self) -> int:
        return len(self.pairs)

    def reset(self) -> None:
        self.pairs.clear()

    def update(self, s: np.ndarray, y: np.ndarray, inner: Callable) -> bool:
        sy = inner(s, y)
        if sy <= 1e-14:
            return False
        self.pairs.append((s, y, 1.0 / sy))
        return True

    def direction(self, G: np.ndarray, inner: Callable) -> np.ndarray:
        if not self.pairs:
            return -G
        q = G.copy()
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * inner(s, q)
            alphas.append(a)
            q -= a * y
        s, y, _ = self.pairs[-1]
        r = (inner(s, y) / inner(y, y)) * q
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            r += (a - rho * inner(y, r)) * s
        return -r


def search_direction(G: np.ndarray, method: str, memory: LBFGSMemory | None = None, inner=None) -> np.ndarray:
    """``-G`` for gradient descent, the L-BFGS direction otherwise."""
    if method == "gd" or memory is None or not len(memory):
        return -G
    return memory.direction(G, inner)


@dataclasses.dataclass
class OptimizerState:
    n: int
    x: np.ndarray
    t: float
    J: float = math.nan
    grad_norm: float = math.nan
    grad_norm_0: float = math.nan
    active: frozenset = frozenset()


@dataclasses.dataclass
class OptimizerResult:
    x: np.ndarray
    records: list[dict]
    reason: str
    iterations: int
    mesh: SimplicialMesh | None = None

    @property
    def values(self) -> np.ndarray:
        return np.array([r["J"] for r in self.records])


def _euclidean_inner(u: np.ndarray, v: np.ndarray) -> float:
    return float(u @ v)


class EuclideanProblem:
    """Finite-dimensional problem ``min f(x)`` s.t. constraints, Euclidean inner product."""

    def __init__(self, f: Callable, grad: Callable, constraints=None) -> None:
        self.f = f
        self.grad = grad
        self.constraints = constraints

    def value(self, x):
        return float(self.f(x))

    def derivative(self, x):
        return np.asarray(self.grad(x), dtype=float)

    def riesz(self, x, b):
        return b.copy(), _euclidean_inner


class ShapeProblem:
    """Shape optimization on a simplicial mesh.

    Gradient deformations are elasticity solves on the current mesh with the
    fixed nodes clamped.
    """

    def __init__(
        self,
        mesh: SimplicialMesh,
        spec: FunctionalSpec,
        params: ElasticityParams = ElasticityParams(),
        fixed_nodes: Iterable[int] = (),
        constraints: ConstraintSystem | None = None,
    ) -> None:
        self.mesh = mesh
        self.functional = ShapeFunctional(mesh, spec)
        self.params = params
        self.fixed_nodes = np.unique(np.asarray(list(fixed_nodes), dtype=np.int64))
        self.fixed_dofs = fixed_dofs(mesh, self.fixed_nodes)
        params.validate(mesh.dim, self.fixed_nodes.size > 0)
        self.constraints = constraints

    def value(self, x):
        return self.functional.value(x)

    def derivative(self, x):
        return self.functional.gradient(x)

    def riesz(self, x, b):
        K = assemble_stiffness(self.mesh, self.params, self.fixed_nodes, coords=x, validate=False)
        G = gradient_deformation(K, b, self.fixed_dofs)

        def inner(u, v):
            return float(u @ (K @ v))

        return G, inner

    def admissible(self, x) -> bool:
        return bool(cell_measures(self.mesh, x).min() > 0.0)

    def metrics(self, x) -> dict:
        return {
            "min_angle": float(cell_angles(self.mesh, x).min()),
            "max_aspect_ratio": float(aspect_ratios(self.mesh, x).max()),
        }


class _Projector:
    """Active set, Jacobian and projection at one outer iterate."""

    def __init__(self, constraints, x, options: OptimizerOptions) -> None:
        self.constraints = constraints
        self.x = x
        self.g = constraints.evaluate(x)
        self.active = proj.find_active(constraints, self.g, options.epsilon)
        self.jacobian = proj.assemble_jacobian(constraints, x, self.active)
        self.solver = proj.MultiplierSolver(self.jacobian)
        self.options = options
        self.dropped: list[int] = []

    def project(self, s: np.ndarray) -> tuple[np.ndarray, str]:
        opts = self.options
        p, lam = proj.project_direction(self.jacobian, s, self.solver)
        cg_its = self.solver.iterations
        while True:
            decision = proj.drop_rule(p, lam, self.jacobian.active, self.constraints.is_equality, opts.kkt_tol)
            if decision.kind != "drop":
                break
            logger.debug("dropping constraint %d (gamma %.3e)", decision.index, decision.gamma)
            self.dropped.append(decision.index)
            self.jacobian = self.jacobian.without(decision.index)
            self.solver = proj.MultiplierSolver(self.jacobian)
            p, lam = proj.project_direction(self.jacobian, s, self.solver)
            cg_its += self.solver.iterations
        self.cg_iterations = cg_its
        A = self.jacobian.matrix
        self.tangency = float(np.abs(A @ p).max(initial=0.0))
        self.tangency_scale = max(1.0, float(np.abs(A @ s).max(initial=0.0)))
        self.multipliers = lam
        return p, decision.kind


def gradient_projection(
    problem,
    x0: np.ndarray,
    options: OptimizerOptions | None = None,
    callback: Callable[[int, np.ndarray, dict], None] | None = None,
) -> OptimizerResult:
    """Run the projected descent loop from the feasible point ``x0``.

    Terminates on the relative gradient-norm test, a KKT point detected by
    the drop rule (reported in preference to the gradient test), ``n_max``
    iterations, a non-descent direction, or step-size underflow.
    """
    opts = options or OptimizerOptions()
    constraints = problem.constraints
    admissible = getattr(problem, "admissible", None)
    metrics = getattr(problem, "metrics", None)
    memory = LBFGSMemory(opts.lbfgs_memory)
    state = OptimizerState(n=0, x=np.array(x0, dtype=float), t=opts.t0)
    t_min = opts.t_min_factor * opts.t0
    records: list[dict] = []
    prev: tuple[np.ndarray, np.ndarray] | None = None
    reason = "max_iterations"

    for n in range(opts.n_max + 1):
        state.n = n
        x = state.x
        J = problem.value(x)
        b = problem.derivative(x)
        G, inner = problem.riesz(x, b)
        gnorm = math.sqrt(max(inner(G, G), 0.0))
        if n == 0:
            state.grad_norm_0 = gnorm
        state.J, state.grad_norm = J, gnorm
        rec = {
            "n": n,
            "J": J,
            "grad_norm": gnorm,
            "grad_norm_rel": gnorm / state.grad_norm_0 if state.grad_norm_0 > 0 else 0.0,
        }
        if metrics is not None:
            rec.update(metrics(x))

        projector = None
        changed = False
        if constraints is not None:
            projector = _Projector(constraints, x, opts)
            active = frozenset(projector.active.tolist())
            changed = n > 0 and active != state.active
            state.active = active
            rec["q_active"] = int(projector.active.size)
        else:
            rec["q_active"] = 0

        if changed:
            # stored pairs describe a different constraint manifold
            memory.reset()
        elif prev is not None and opts.method == "lbfgs":
            memory.update(x - prev[0], G - prev[1], inner)

        grad_converged = gnorm <= opts.tau * state.grad_norm_0
        S = search_direction(G, opts.method, memory, inner)
        decision = "keep"
        if projector is not None:
            p, decision = projector.project(S)
        else:
            p = S
        slope = inner(G, p)
        if decision != "converged" and slope >= 0 and len(memory):
            memory.reset()
            S = -G
            p, decision = projector.project(S) if projector is not None else (S, "keep")
            slope = inner(G, p)
        rec["slope"] = slope
        if opts.method == "lbfgs":
            rec["lbfgs_pairs"] = len(memory)
        if projector is not None:
            rec.update(
                dropped=len(projector.dropped),
                dropped_rows=list(projector.dropped),
                multiplier_cg_iterations=projector.cg_iterations,
                tangency=projector.tangency,
                tangency_scale=projector.tangency_scale,
                regularized=projector.solver.regularized,
            )

        stop = None
        if decision == "converged":
            stop = "kkt"
        elif grad_converged:
            stop = "gradient_tolerance"
        elif n == opts.n_max:
            stop = "max_iterations"
        elif slope >= 0:
            stop = "no_descent_direction"
        if stop is not None:
            reason = stop
            rec["t"] = None
            rec["termination_reason"] = reason
            records.append(rec)
            if callback:
                callback(n, x, rec)
            break

        t = state.t
        ctx = None
        if projector is not None:
            ctx = proj.StepContext(
                constraints,
                x,
                projector.g,
                projector.jacobian,
                projector.solver,
                opts.epsilon,
                opts.newton_max,
                admissible,
            )
            try:
                try:
                    t_star, newly, bis_its = proj.max_feasible_step(
                        ctx, p, t, opts.bisect_max, opts.bisect_rtol, opts.t_min_factor * t
                    )
                except proj.StepTooSmallError:
                    # pulling slack active rows onto g = 0 is infeasible even for
                    # tiny steps; retry keeping their current levels
                    logger.debug("iteration %d: restoring with frozen constraint levels", n)
                    ctx.keep_levels = True
                    t_star, newly, bis_its = proj.max_feasible_step(
                        ctx, p, t, opts.bisect_max, opts.bisect_rtol, opts.t_min_factor * t
                    )
            except proj.StepTooSmallError as exc:
                logger.info("step size underflow: %s", exc)
                reason = "step_underflow"
                rec.update(t=None, termination_reason=reason)
                records.append(rec)
                if callback:
                    callback(n, x, rec)
                break
            rec.update(
                t_star=t_star,
                activated=int(newly.size),
                bisection_iterations=bis_its,
                keep_levels=ctx.keep_levels,
            )
            t = t_star

        y = None
        while t >= t_min:
            if ctx is not None:
                y, _ = ctx.trial(p, t)
            else:
                y = x + t * p
                if admissible is not None and not admissible(y):
                    y = None
            if y is not None and problem.value(y) <= J + opts.sigma * t * slope:
                break
            y = None
            t *= opts.omega
        if y is None:
            reason = "step_underflow"
            rec.update(t=None, termination_reason=reason)
            records.append(rec)
            if callback:
                callback(n, x, rec)
            break

        rec["t"] = t
        if ctx is not None:
            rec["newton_iterations"] = ctx.newton_iterations
        records.append(rec)
        if callback:
            callback(n, x, rec)
        prev = (x, G)
        state.x = y
        state.t = t / opts.omega

    return OptimizerResult(x=state.x, records=records, reason=reason, iterations=state.n)


def optimize_shape(
    mesh: SimplicialMesh,
    spec: FunctionalSpec,
    *,
    params: ElasticityParams = ElasticityParams(),
    fixed_nodes: Iterable[int] = (),
    constraints: ConstraintSystem | None = None,
    options: OptimizerOptions | None = None,
    callback=None,
) -> OptimizerResult:
    """Shape optimization of ``mesh``; pass ``constraints=None`` for the classical method."""
    problem = ShapeProblem(mesh, spec, params, fixed_nodes, constraints)
    if constraints is not None:
        g = constraints.evaluate(mesh.coords)
        worst = int(np.argmax(g[: constraints.n_quality])) if constraints.n_quality else 0
        if constraints.n_quality and g[worst] > constraints.epsilon:
            raise ValueError(
                f"initial mesh infeasible: constraint {worst} (cell {worst // (mesh.dim + 1)}) "
                f"violated by {g[worst]:.3e}"
            )
    result = gradient_projection(problem, mesh.coords, options, callback)
    result.mesh = mesh.with_coords(result.x)
    return result
