"""P1 linear elasticity used as the inner product for shape gradients.

The bilinear form is

    a(V, W) = int 2 mu eps(V):eps(W) + lambda div V div W + delta V.W dx

with ``eps(V)`` the symmetric gradient. Degrees of freedom are interleaved
per node, matching :attr:`meshguard.mesh.SimplicialMesh.coords`.
"""

from __future__ import annotations

import dataclasses
import logging

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from meshguard.mesh import SimplicialMesh, cell_measures

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclasses.dataclass(frozen=True)
class ElasticityParams:
    mu_elas: float = 1.0
    lambda_elas: float = 0.0
    delta_elas: float = 0.0
    inverse_volume_weighting: bool = False

    def validate(self, dim: int, has_fixed: bool) -> None:
        if not self.mu_elas > 0:
            raise ValueError(f"mu_elas must be positive, got {self.mu_elas}")
        if not 2 * self.mu_elas + dim * self.lambda_elas > 0:
            raise ValueError("2 mu_elas + d lambda_elas must be positive")
        if self.delta_elas < 0:
            raise ValueError("delta_elas must be nonnegative")
        if not has_fixed and self.delta_elas == 0:
            raise ValueError("delta_elas > 0 is required when no boundary is fixed")


def basis_gradients(mesh: SimplicialMesh, coords: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the P1 hat functions on every cell, shape ``(M, d+1, d)``,
    together with the (signed) cell measures."""
    points = mesh.points if coords is None else np.asarray(coords).reshape(mesh.points.shape)
    p = points[mesh.cells]
    jac = np.swapaxes(p[:, 1:, :] - p[:, :1, :], 1, 2)  # columns are edge vectors
    inv = np.linalg.inv(jac)  # rows: gradients of hat functions 1..d
    grads = np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)
    return grads, cell_measures(mesh, points)


def element_matrices(mesh: SimplicialMesh, params: ElasticityParams, coords: np.ndarray | None = None) -> np.ndarray:
    """Local stiffness matrices, shape ``(M, (d+1) d, (d+1) d)``."""
    d = mesh.dim
    k = d + 1
    grads, vol = basis_gradients(mesh, coords)
    vol = np.abs(vol)
    weight = 1.0 / vol if params.inverse_volume_weighting else np.ones_like(vol)
    mu = params.mu_elas * weight
    lam = params.lambda_elas * weight
    delta = params.delta_elas * weight

    gg = np.einsum("mai,mbi->mab", grads, grads)  # grad phi_a . grad phi_b
    eye = np.eye(d)
    # block[a, i, b, j] = vol (mu (gg_ab d_ij + dj phi_a di phi_b) + lam di phi_a dj phi_b)
    block = (
        mu[:, None, None, None, None] * (
            gg[:, :, None, :, None] * eye[None, None, :, None, :]
            + np.einsum("maj,mbi->maibj", grads, grads)
        )
        + lam[:, None, None, None, None] * np.einsum("mai,mbj->maibj", grads, grads)
    ) * vol[:, None, None, None, None]
    if params.delta_elas:
        mass = (np.ones((k, k)) + np.eye(k)) / ((d + 1) * (d + 2))
        block += (delta * vol)[:, None, None, None, None] * (
            mass[None, :, None, :, None] * eye[None, None, :, None, :]
        )
    return block.reshape(-1, k * d, k * d)


def _dofs(mesh: SimplicialMesh) -> np.ndarray:
    d = mesh.dim
    return (d * mesh.cells[:, :, None] + np.arange(d)).reshape(mesh.cell_count, -1)


def fixed_dofs(mesh: SimplicialMesh, fixed_nodes) -> np.ndarray:
    fixed_nodes = np.asarray(fixed_nodes, dtype=np.int64)
    return (mesh.dim * fixed_nodes[:, None] + np.arange(mesh.dim)).reshape(-1)


def assemble_stiffness(
    mesh: SimplicialMesh,
    params: ElasticityParams,
    fixed=(),
    coords: np.ndarray | None = None,
    validate: bool = True,
) -> sparse.csr_matrix:
    """Global stiffness matrix with fixed-node rows and columns eliminated.

    Eliminated degrees of freedom get a unit diagonal and zero off-diagonal
    entries, so the matrix stays symmetric and, on the free subspace,
    positive definite.
    """
    fixed = np.asarray(fixed, dtype=np.int64)
    if validate:
        params.validate(mesh.dim, fixed.size > 0)
    dofs = _dofs(mesh)
    ke = element_matrices(mesh, params, coords)
    n = mesh.dim * mesh.node_count
    nloc = dofs.shape[1]
    rows = np.repeat(dofs, nloc, axis=1).ravel()
    cols = np.tile(dofs, (1, nloc)).ravel()
    K = sparse.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    if fixed.size:
        fd = fixed_dofs(mesh, fixed)
        keep = np.ones(n)
        keep[fd] = 0.0
        D = sparse.diags(keep)
        unit = np.zeros(n)
        unit[fd] = 1.0
        K = (D @ K @ D + sparse.diags(unit)).tocsr()
    K.sum_duplicates()
    K.eliminate_zeros()
    return K


def cg_solve(K: sparse.csr_matrix, b: np.ndarray, rtol: float = 1e-10, maxiter: int | None = None) -> tuple[np.ndarray, int]:
    """Jacobi-preconditioned conjugate gradients; returns ``(x, iterations)``."""
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros_like(b), 0
    diag = K.diagonal()
    M = sparse.diags(1.0 / diag)
    maxiter = maxiter or 50 * b.size
    count = [0]

    def callback(_):
        count[0] += 1

    x, info = spla.cg(K, b, rtol=rtol, atol=0.0, maxiter=maxiter, M=M, callback=callback)
    if info != 0:
        res = np.linalg.norm(K @ x - b) / np.linalg.norm(b)
        raise SolverError(f"elasticity CG did not converge in {maxiter} iterations (residual {res:.3e})")
    return x, count[0]


def gradient_deformation(
    K: sparse.csr_matrix, b: np.ndarray, fixed_dofs_: np.ndarray = (), rtol: float = 1e-10
) -> np.ndarray:
    """Solve ``K G = b`` on the free degrees of freedom; ``G`` vanishes at fixed ones.

    Args:
        K: Stiffness from :func:`assemble_stiffness` with the same fixed set.
        b: Discrete shape derivative (derivative of the objective w.r.t. the
            node coordinates).
        fixed_dofs_: Flat indices of fixed degrees of freedom.
    """
    rhs = np.array(b, dtype=float)
    fixed_dofs_ = np.asarray(fixed_dofs_, dtype=np.int64)
    rhs[fixed_dofs_] = 0.0
    G, its = cg_solve(K, rhs, rtol=rtol)
    G[fixed_dofs_] = 0.0
    logger.debug("gradient deformation: %d CG iterations", its)
    return G


def solve_dirichlet(
    mesh: SimplicialMesh,
    params: ElasticityParams,
    dofs: np.ndarray,
    values: np.ndarray,
    rtol: float = 1e-13,
) -> np.ndarray:
    """Homogeneous elasticity problem with prescribed values at ``dofs``."""
    n = mesh.dim * mesh.node_count
    dofs = np.asarray(dofs, dtype=np.int64)
    K_full = assemble_stiffness(mesh, params, validate=False)
    lift = np.zeros(n)
    lift[dofs] = values
    rhs = -(K_full @ lift)
    free = np.ones(n, dtype=bool)
    free[dofs] = False
    K_ff = K_full[free][:, free]
    u_free, _ = cg_solve(K_ff.tocsr(), rhs[free], rtol=rtol)
    u = lift
    u[free] = u_free
    return u
