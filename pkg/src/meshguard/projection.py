"""Active-set machinery of the gradient projection method.

The engine works with any constraint container that provides

* ``n_rows`` and a boolean ``is_equality`` mask,
* ``evaluate(x, rows=None)`` returning constraint values ``g``,
* ``jacobian(x, rows)`` returning the requested rows of ``dg/dx`` as a
  sparse matrix,
* optionally a boolean ``candidates`` mask of inequality rows allowed to
  become active.

:class:`meshguard.quality.ConstraintSystem` is the mesh implementation;
:class:`FunctionConstraints` wraps plain callables for small problems.
"""

from __future__ import annotations

import dataclasses
import logging
import warnings
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import linalg as spla

logger = logging.getLogger(__name__)

NEWTON_MAX = 10
BISECT_MAX = 30
BISECT_RTOL = 1e-3
T_MIN_FACTOR = 1e-12


class OverConstrainedError(RuntimeError):
    """More active constraints than optimization variables."""


class MultiplierSolveError(RuntimeError):
    pass


class RestorationError(RuntimeError):
    """Frozen-Jacobian Newton iteration did not reach the target tolerance."""


class StepTooSmallError(RuntimeError):
    pass


class SingularSystemWarning(RuntimeWarning):
    pass


class FunctionConstraints:
    """Constraints given as callables, for small dense problems.

    Args:
        functions: ``g_k(x)`` callables.
        gradients: ``grad g_k(x)`` callables returning 1-D arrays.
        equality: Flags marking equality constraints (default: none).
    """

    def __init__(
        self,
        functions: Sequence[Callable[[np.ndarray], float]],
        gradients: Sequence[Callable[[np.ndarray], np.ndarray]],
        equality: Sequence[bool] | None = None,
    ) -> None:
        if len(functions) != len(gradients):
            raise ValueError("need one gradient per constraint function")
        self.functions = list(functions)
        self.gradients = list(gradients)
        self.n_rows = len(self.functions)
        self.is_equality = np.zeros(self.n_rows, dtype=bool)
        if equality is not None:
            self.is_equality[:] = equality

    def evaluate(self, x: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        rows = range(self.n_rows) if rows is None else rows
        return np.array([self.functions[k](x) for k in rows], dtype=float)

    def jacobian(self, x: np.ndarray, rows: np.ndarray) -> sparse.csr_matrix:
        dense = np.array([self.gradients[k](x) for k in rows], dtype=float).reshape(len(rows), x.size)
        return sparse.csr_matrix(dense)


def find_active(constraints, g: np.ndarray, epsilon: float) -> np.ndarray:
    near = np.abs(g) <= epsilon
    candidates = getattr(constraints, "candidates", None)
    if candidates is not None:
        near &= candidates
    return np.flatnonzero(near | constraints.is_equality)


@dataclasses.dataclass
class SparseConstraintJacobian:
    """Jacobian ``A`` of the active constraints; row ``r`` belongs to ``active[r]``."""

    matrix: sparse.csr_matrix
    active: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def row_of(self, constraint: int) -> int:
        r = int(np.searchsorted(self.active, constraint))
        if r >= self.active.size or self.active[r] != constraint:
            raise KeyError(f"constraint {constraint} is not active")
        return r

    def without(self, constraint: int) -> SparseConstraintJacobian:
        keep = np.ones(self.active.size, dtype=bool)
        keep[self.row_of(constraint)] = False
        return SparseConstraintJacobian(self.matrix[keep], self.active[keep])


def assemble_jacobian(constraints, x: np.ndarray, active: np.ndarray) -> SparseConstraintJacobian:
    active = np.asarray(active, dtype=np.int64)
    if active.size > x.size:
        raise OverConstrainedError(
            f"{active.size} active constraints exceed the {x.size} optimization variables"
        )
    return SparseConstraintJacobian(constraints.jacobian(x, active).tocsr(), active)


class MultiplierSolver:
    """Solves ``A A^T lam = r`` for a Jacobian frozen during an outer iteration.

    Small systems (``q <= dense_limit``) use a dense Cholesky factorization;
    larger ones use conjugate gradients with a Jacobi preconditioner. When
    the normal matrix is (near) singular a Tikhonov shift of
    ``1e-12 * trace / q`` is added to its diagonal and a warning is issued.
    """

    def __init__(self, A, rtol: float = 1e-12, dense_limit: int = 200) -> None:
        mat = A.matrix if isinstance(A, SparseConstraintJacobian) else sparse.csr_matrix(A)
        self.A = mat
        self.q = mat.shape[0]
        self.rtol = rtol
        self.regularized = False
        self.iterations = 0
        self.total_iterations = 0
        self._normal = (mat @ mat.T).tocsr()
        self._chol = None
        if self.q == 0:
            return
        diag = self._normal.diagonal()
        self._shift = 1e-12 * diag.sum() / self.q
        if self.q <= dense_limit:
            dense = self._normal.toarray()
            try:
                chol = scipy.linalg.cho_factor(dense)
                pivots = np.abs(np.diag(chol[0])) ** 2
                if pivots.min() <= 1e-14 * pivots.max():
                    raise np.linalg.LinAlgError("near-singular normal matrix")
                self._chol = chol
            except np.linalg.LinAlgError:
                self._regularize()
                self._chol = scipy.linalg.cho_factor(dense + self._shift * np.eye(self.q))
        else:
            self._jacobi = sparse.diags(1.0 / np.where(diag > 0, diag, 1.0))

    def _regularize(self) -> None:
        self.regularized = True
        warnings.warn(
            "active constraint gradients are (nearly) linearly dependent; "
            "using a Tikhonov-regularized multiplier solve",
            SingularSystemWarning,
            stacklevel=3,
        )

    def _cg(self, operator, rhs: np.ndarray) -> tuple[np.ndarray, int, int]:
        count = [0]

        def callback(_):
            count[0] += 1

        lam, info = spla.cg(
            operator, rhs, rtol=self.rtol, atol=0.0, maxiter=10 * self.q, M=self._jacobi, callback=callback
        )
        return lam, info, count[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        self.iterations = 0
        if self.q == 0:
            return np.zeros(0)
        if self._chol is not None:
            return scipy.linalg.cho_solve(self._chol, rhs)
        if not np.any(rhs):
            return np.zeros(self.q)
        operator = self._normal
        if self.regularized:
            operator = self._normal + self._shift * sparse.identity(self.q, format="csr")
        lam, info, its = self._cg(operator, rhs)
        if info != 0 and not self.regularized:
            self._regularize()
            operator = self._normal + self._shift * sparse.identity(self.q, format="csr")
            lam, info, more = self._cg(operator, rhs)
            its += more
        self.iterations = its
        self.total_iterations += its
        if info != 0:
            residual = np.linalg.norm(operator @ lam - rhs) / np.linalg.norm(rhs)
            raise MultiplierSolveError(
                f"multiplier CG did not converge in {10 * self.q} iterations "
                f"(relative residual {residual:.3e})"
            )
        return lam


def project_direction(
    A, s: np.ndarray, solver: MultiplierSolver | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Project ``s`` onto the null space of ``A``: ``p = s - A^T lam``, ``A A^T lam = A s``."""
    s = np.asarray(s, dtype=float)
    mat = A.matrix if isinstance(A, SparseConstraintJacobian) else sparse.csr_matrix(A)
    if mat.shape[0] == 0:
        return s.copy(), np.zeros(0)
    if solver is None:
        solver = MultiplierSolver(mat)
    lam = solver.solve(mat @ s)
    p = s - mat.T @ lam
    # one step of iterative refinement: removes the part of A p left by the
    # multiplier solve (matters when A A^T is ill-conditioned)
    r = mat @ p
    if np.any(r):
        dlam = solver.solve(r)
        p = p - mat.T @ dlam
        lam = lam + dlam
    return p, lam


@dataclasses.dataclass(frozen=True)
class DropDecision:
    kind: str  # "keep", "drop" or "converged"
    index: int | None = None
    gamma: float = 0.0

    @classmethod
    def keep(cls, gamma: float = 0.0) -> DropDecision:
        return cls("keep", None, gamma)


def drop_rule(
    p: np.ndarray,
    lam: np.ndarray,
    active: np.ndarray,
    is_equality: np.ndarray,
    kkt_tol: float = 1e-8,
) -> DropDecision:
    """Decide whether to keep the active set, drop a constraint, or stop.

    With ``gamma = -min({lam_j : j inequality} U {0})``, the inequality row
    with the most negative multiplier is dropped when ``|p| < gamma``. A
    point is a KKT point when ``|p| <= kkt_tol`` and no inequality multiplier
    is below ``-kkt_tol``. Equality rows are never dropped.
    """
    active = np.asarray(active, dtype=np.int64)
    norm_p = float(np.linalg.norm(p))
    ineq = np.flatnonzero(~np.asarray(is_equality)[active]) if active.size else np.zeros(0, dtype=np.int64)
    if ineq.size:
        r = ineq[np.argmin(lam[ineq])]
        gamma = max(0.0, -float(lam[r]))
    else:
        r, gamma = None, 0.0
    if norm_p < gamma:
        return DropDecision("drop", int(active[r]), gamma)
    if norm_p <= kkt_tol and (ineq.size == 0 or lam[ineq].min() >= -kkt_tol):
        return DropDecision("converged", None, gamma)
    return DropDecision("keep", None, gamma)


def restore_feasibility(
    coords_trial: np.ndarray,
    A,
    constraints,
    epsilon: float,
    solver: MultiplierSolver | None = None,
    newton_max: int = NEWTON_MAX,
    targets: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Newton iteration with frozen Jacobian back onto the active constraints.

    ``y <- y - A^T (A A^T)^{-1} h(y)`` with ``h = g_active(y) - targets``
    (``targets`` defaults to zero, i.e. the constraint surfaces). Stops once
    ``max |h| <= epsilon / 10``.

    Returns:
        The restored point and the number of Newton updates performed.

    Raises:
        RestorationError: If the target is not met within ``newton_max`` updates.
    """
    y = np.array(coords_trial, dtype=float)
    mat = A.matrix
    if A.active.size == 0:
        return y, 0
    if solver is None:
        solver = MultiplierSolver(mat)
    tol = epsilon / 10.0
    targets = np.zeros(A.active.size) if targets is None else np.asarray(targets, dtype=float)
    for it in range(newton_max + 1):
        h = constraints.evaluate(y, A.active) - targets
        err = np.abs(h).max()
        if not np.isfinite(err):
            break
        if err <= tol:
            return y, it
        if it == newton_max:
            break
        y = y - mat.T @ solver.solve(h)
    raise RestorationError(f"back-projection did not converge in {newton_max} iterations")


@dataclasses.dataclass
class StepContext:
    """Everything frozen at the accepted iterate ``x_n`` for trial steps."""

    constraints: object
    x: np.ndarray
    g: np.ndarray
    jacobian: SparseConstraintJacobian
    solver: MultiplierSolver
    epsilon: float
    newton_max: int = NEWTON_MAX
    admissible: Callable[[np.ndarray], bool] | None = None
    newton_iterations: int = 0
    keep_levels: bool = False

    def __post_init__(self) -> None:
        inactive = np.ones(self.g.size, dtype=bool)
        inactive[self.jacobian.active] = False
        self.inactive = np.flatnonzero(inactive)
        # previously inactive rows may not end above max(eps/10, g(x_n)), the
        # same slack the back-projection grants the active rows
        self.limit = np.maximum(self.epsilon / 10.0, self.g[self.inactive])

    @property
    def targets(self) -> np.ndarray | None:
        """Back-projection targets of the active rows.

        By default all active rows are pulled onto their surfaces ``g = 0``.
        With ``keep_levels`` slack inequality rows keep their value at
        ``x_n`` (violated ones still go to 0), which makes ``y*(x_n, 0) = x_n``
        so that small enough steps are always feasible.
        """
        if not self.keep_levels:
            return None
        act = self.jacobian.active
        return np.where(self.constraints.is_equality[act], 0.0, np.minimum(self.g[act], 0.0))

    def restore(self, p: np.ndarray, t: float) -> tuple[np.ndarray | None, np.ndarray | None]:
        """Restored point ``y*(x_n, t)`` and its constraint values, or ``(None, None)``
        when back-projection fails or a previously inactive row is violated.

        Mesh admissibility is not checked here, so bisection only reacts to
        the constraints; :meth:`trial` adds the admissibility test.
        """
        try:
            y, its = restore_feasibility(
                self.x + t * p,
                self.jacobian,
                self.constraints,
                self.epsilon,
                self.solver,
                self.newton_max,
                self.targets,
            )
        except RestorationError:
            self.newton_iterations += self.newton_max
            return None, None
        self.newton_iterations += its
        g = self.constraints.evaluate(y)
        if np.any(g[self.inactive] > self.limit) or not np.all(np.isfinite(g)):
            return None, None
        return y, g

    def trial(self, p: np.ndarray, t: float) -> tuple[np.ndarray | None, np.ndarray | None]:
        """Like :meth:`restore`, but also rejects inadmissible (e.g. inverted) points."""
        y, g = self.restore(p, t)
        if y is not None and self.admissible is not None and not self.admissible(y):
            return None, None
        return y, g

    def newly_active(self, g: np.ndarray) -> np.ndarray:
        near = np.abs(g[self.inactive]) <= self.epsilon
        candidates = getattr(self.constraints, "candidates", None)
        if candidates is not None:
            near &= candidates[self.inactive]
        return self.inactive[near]


def max_feasible_step(
    ctx: StepContext,
    p: np.ndarray,
    t_init: float,
    bisect_max: int = BISECT_MAX,
    bisect_rtol: float = BISECT_RTOL,
    t_min: float | None = None,
) -> tuple[float, np.ndarray, int]:
    """Largest step in ``(0, t_init]`` whose restored point stays feasible.

    If ``t_init`` is feasible it is returned unchanged. Otherwise bisection
    on ``[0, t_init]`` keeps a feasible lower end and stops once that point
    activates a previously inactive constraint or the bracket is narrower than
    ``bisect_rtol * t_init``.

    Returns:
        ``(t_star, newly_active, bisection_iterations)``.

    Raises:
        StepTooSmallError: If no feasible step above ``t_min`` was found.
    """
    t_min = T_MIN_FACTOR * t_init if t_min is None else t_min
    y, g = ctx.restore(p, t_init)
    if y is not None:
        return t_init, ctx.newly_active(g), 0
    lo, hi = 0.0, t_init
    g_lo = None
    its = 0
    while its < bisect_max:
        its += 1
        mid = 0.5 * (lo + hi)
        y, g = ctx.restore(p, mid)
        if y is None:
            hi = mid
        else:
            lo, g_lo = mid, g
            if ctx.newly_active(g).size:
                break
        if hi - lo <= bisect_rtol * t_init and g_lo is not None:
            break
    if g_lo is None or lo <= t_min:
        raise StepTooSmallError(f"no feasible step above {t_min:.3e} (bracket [{lo:.3e}, {hi:.3e}])")
    return lo, ctx.newly_active(g_lo), its
