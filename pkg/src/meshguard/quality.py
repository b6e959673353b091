"""Angle and solid-angle quality constraints with analytic sparse gradients.

Every cell contributes one inequality constraint per vertex,
``g = alpha_thr - alpha <= 0``, where ``alpha`` is the interior angle (2D) or
the solid angle (3D) at that vertex. Constraint rows are laid out cell-major
(row ``(d + 1) * cell + local_vertex``), followed by ``d`` equality rows per
fixed node (``g = v - v0``), one per coordinate.
"""

from __future__ import annotations

import dataclasses
import io
import math
from typing import Iterable

import numpy as np
from scipy import sparse

from meshguard.mesh import SimplicialMesh, atomic_write_text, cell_measures

REGULAR_TET_SOLID_ANGLE = math.acos(23.0 / 27.0)


class InfeasibleMeshError(ValueError):
    """The initial mesh violates the requested angle thresholds."""

    def __init__(self, cell: int, angle: float, threshold: float) -> None:
        self.cell = cell
        self.angle = angle
        self.threshold = threshold
        super().__init__(
            f"initial mesh infeasible: cell {cell} has minimum angle {angle:.6g} "
            f"below threshold {threshold:.6g}"
        )


class DegenerateSimplexError(ValueError):
    pass


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross on (..., 3) arrays; explicit form is faster for large batches
    return np.stack(
        [
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ],
        axis=-1,
    )


def _norm(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("...i,...i->...", a, a))


def _angle_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    cos = np.einsum("...i,...i->...", a, b) / (_norm(a) * _norm(b))
    return np.arccos(np.clip(cos, -1.0, 1.0))


def triple_direction(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``T(a, b) = a x (a x b) / (|a| |a x (a x b)|)`` for batches of 3-vectors.

    This is the derivative of the angle between ``a`` and ``b`` w.r.t. ``a``.
    """
    c = _cross(a, _cross(a, b))
    return c / (_norm(a) * _norm(c))[..., None]


def _pad3(a: np.ndarray) -> np.ndarray:
    return np.concatenate([a, np.zeros(a.shape[:-1] + (1,))], axis=-1)


# ---------------------------------------------------------------------------
# triangles

_TRI_ROLES = ((0, 1, 2), (1, 2, 0), (2, 0, 1))


def triangle_angles_batch(p: np.ndarray) -> np.ndarray:
    """Interior angles of triangles ``p`` of shape ``(M, 3, 2)``; returns ``(M, 3)``."""
    out = np.empty(p.shape[:2])
    for i, j, k in _TRI_ROLES:
        out[:, i] = _angle_between(p[:, i] - p[:, j], p[:, i] - p[:, k])
    return out


def triangle_angle_gradients_batch(p: np.ndarray) -> np.ndarray:
    """Derivatives of all triangle angles, shape ``(M, angle, vertex, 2)``."""
    m = p.shape[0]
    grads = np.empty((m, 3, 3, 2))
    p3 = _pad3(p)
    for i, j, k in _TRI_ROLES:
        e_ij = p3[:, i] - p3[:, j]
        e_ik = p3[:, i] - p3[:, k]
        t_jk = triple_direction(e_ij, e_ik)[:, :2]
        t_kj = triple_direction(e_ik, e_ij)[:, :2]
        grads[:, i, i] = t_jk + t_kj
        grads[:, i, j] = -t_jk
        grads[:, i, k] = -t_kj
    return grads


def _check_triangle(pts: np.ndarray) -> None:
    edges = pts[[1, 2, 0]] - pts
    if np.any(_norm(edges) == 0.0):
        raise DegenerateSimplexError("degenerate triangle: zero edge length")
    cross = edges[0, 0] * edges[1, 1] - edges[0, 1] * edges[1, 0]
    if cross == 0.0:
        raise DegenerateSimplexError("degenerate triangle: zero area")


def triangle_angles(p_i, p_j, p_k) -> np.ndarray:
    """Angles at ``p_i``, ``p_j``, ``p_k`` of a single triangle (radians)."""
    pts = np.array([p_i, p_j, p_k], dtype=float)
    _check_triangle(pts)
    return triangle_angles_batch(pts[None])[0]


def triangle_angle_gradients(p_i, p_j, p_k) -> np.ndarray:
    """Gradient of every angle w.r.t. every vertex, shape ``(3, 3, 2)``.

    Entry ``[a, b]`` is the derivative of the angle at vertex ``a`` with
    respect to the position of vertex ``b``.
    """
    pts = np.array([p_i, p_j, p_k], dtype=float)
    _check_triangle(pts)
    return triangle_angle_gradients_batch(pts[None])[0]


# ---------------------------------------------------------------------------
# tetrahedra

_TET_ROLES = ((0, 1, 2, 3), (1, 0, 2, 3), (2, 0, 1, 3), (3, 0, 1, 2))


def _dihedral(p: np.ndarray, i: int, j: int, k: int, l: int) -> np.ndarray:
    e_ij = p[:, i] - p[:, j]
    return _angle_between(_cross(e_ij, p[:, i] - p[:, k]), _cross(e_ij, p[:, i] - p[:, l]))


def tet_dihedral_angles_batch(p: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
    """Dihedral angle at each of the six edges, keyed by sorted vertex pair."""
    out = {}
    for a in range(4):
        for b in range(a + 1, 4):
            c, d = (v for v in range(4) if v not in (a, b))
            out[(a, b)] = _dihedral(p, a, b, c, d)
    return out


def tet_solid_angles_batch(p: np.ndarray) -> np.ndarray:
    """Solid angles of tetrahedra ``p`` of shape ``(M, 4, 3)``; returns ``(M, 4)``.

    Uses the sum of the three dihedral angles at the edges incident to each
    vertex minus pi.
    """
    dih = tet_dihedral_angles_batch(p)
    out = np.empty(p.shape[:2])
    for a in range(4):
        out[:, a] = sum(dih[tuple(sorted((a, b)))] for b in range(4) if b != a) - math.pi
    return out


def _solid_angle_vertex_gradients(p: np.ndarray, i: int, j: int, k: int, l: int) -> np.ndarray:
    """Derivative of the solid angle at ``i`` w.r.t. vertices ``i, j, k, l``."""

    def e(a, b):
        return p[:, a] - p[:, b]

    def n(a, b, c):
        return _cross(e(a, b), e(a, c))

    def T(a, b):
        return triple_direction(a, b)

    n_ijk, n_ijl = n(i, j, k), n(i, j, l)
    n_ikj, n_ikl = n(i, k, j), n(i, k, l)
    n_ilj, n_ilk = n(i, l, j), n(i, l, k)
    t_jk_ij, t_jl_ij = T(n_ijk, n_ijl), T(n_ijl, n_ijk)
    t_kj_ik, t_kl_ik = T(n_ikj, n_ikl), T(n_ikl, n_ikj)
    t_lj_il, t_lk_il = T(n_ilj, n_ilk), T(n_ilk, n_ilj)

    # derivatives of g = alpha_thr - alpha; negated below
    dg_i = (
        _cross(t_jk_ij - t_kj_ik, e(j, k))
        + _cross(t_jl_ij - t_lj_il, e(j, l))
        + _cross(t_kl_ik - t_lk_il, e(k, l))
    )
    dg_j = _cross(t_kj_ik - t_jk_ij, e(i, k)) + _cross(t_lj_il - t_jl_ij, e(i, l))
    dg_k = _cross(t_jk_ij - t_kj_ik, e(i, j)) + _cross(t_lk_il - t_kl_ik, e(i, l))
    dg_l = _cross(t_jl_ij - t_lj_il, e(i, j)) + _cross(t_kl_ik - t_lk_il, e(i, k))
    return -np.stack([dg_i, dg_j, dg_k, dg_l], axis=1)


def tet_solid_angle_gradients_batch(p: np.ndarray) -> np.ndarray:
    """Derivatives of all solid angles, shape ``(M, angle, vertex, 3)``."""
    grads = np.empty((p.shape[0], 4, 4, 3))
    for roles in _TET_ROLES:
        g = _solid_angle_vertex_gradients(p, *roles)
        grads[:, roles[0], list(roles)] = g
    return grads


def _check_tet(pts: np.ndarray) -> None:
    for i, j, k, l in _TET_ROLES:
        e_ij = pts[i] - pts[j]
        for other in (k, l):
            if _norm(np.cross(e_ij, pts[i] - pts[other])) == 0.0:
                raise DegenerateSimplexError("degenerate tetrahedron: zero face normal")
    if np.linalg.det(pts[1:] - pts[0]) == 0.0:
        raise DegenerateSimplexError("degenerate tetrahedron: zero volume")


def tet_solid_angles(p_i, p_j, p_k, p_l) -> np.ndarray:
    """Solid angles (steradians) at the four vertices of a tetrahedron."""
    pts = np.array([p_i, p_j, p_k, p_l], dtype=float)
    _check_tet(pts)
    return tet_solid_angles_batch(pts[None])[0]


def tet_solid_angle_gradients(p_i, p_j, p_k, p_l) -> np.ndarray:
    """Gradient of every solid angle w.r.t. every vertex, shape ``(4, 4, 3)``."""
    pts = np.array([p_i, p_j, p_k, p_l], dtype=float)
    _check_tet(pts)
    return tet_solid_angle_gradients_batch(pts[None])[0]


# ---------------------------------------------------------------------------
# mesh-level quantities


def cell_angles(mesh: SimplicialMesh, coords: np.ndarray | None = None) -> np.ndarray:
    """All (solid) angles of the mesh, shape ``(M, d + 1)``."""
    points = mesh.points if coords is None else np.asarray(coords).reshape(mesh.points.shape)
    p = points[mesh.cells]
    return triangle_angles_batch(p) if mesh.dim == 2 else tet_solid_angles_batch(p)


def cell_angle_gradients(mesh: SimplicialMesh, coords: np.ndarray, cells: np.ndarray) -> np.ndarray:
    points = np.asarray(coords).reshape(mesh.points.shape)
    p = points[mesh.cells[cells]]
    if mesh.dim == 2:
        return triangle_angle_gradients_batch(p)
    return tet_solid_angle_gradients_batch(p)


def aspect_ratios(mesh: SimplicialMesh, coords: np.ndarray | None = None) -> np.ndarray:
    """Normalized aspect ratio: longest edge over ``2 sqrt(3)`` (2D) or
    ``2 sqrt(6)`` (3D) times the inradius. Equals 1 for regular cells."""
    points = mesh.points if coords is None else np.asarray(coords).reshape(mesh.points.shape)
    p = points[mesh.cells]
    d = mesh.dim
    pairs = [(a, b) for a in range(d + 1) for b in range(a + 1, d + 1)]
    lengths = np.stack([_norm(p[:, a] - p[:, b]) for a, b in pairs], axis=1)
    measure = np.abs(cell_measures(mesh, points))
    if d == 2:
        inradius = 2.0 * measure / lengths.sum(axis=1)
        return lengths.max(axis=1) / (2.0 * math.sqrt(3.0) * inradius)
    faces = [(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)]
    area = sum(0.5 * _norm(_cross(p[:, b] - p[:, a], p[:, c] - p[:, a])) for a, b, c in faces)
    inradius = 3.0 * measure / area
    return lengths.max(axis=1) / (2.0 * math.sqrt(6.0) * inradius)


def quality_report(mesh: SimplicialMesh, coords: np.ndarray | None = None) -> dict[str, np.ndarray]:
    angles = cell_angles(mesh, coords)
    return {
        "cell_id": np.arange(mesh.cell_count),
        "min_angle": angles.min(axis=1),
        "max_angle": angles.max(axis=1),
        "aspect_ratio": aspect_ratios(mesh, coords),
    }


def write_quality_csv(report: dict[str, np.ndarray], path) -> None:
    buf = io.StringIO()
    buf.write("cell_id,min_angle,max_angle,aspect_ratio\n")
    for row in zip(*(report[k] for k in ("cell_id", "min_angle", "max_angle", "aspect_ratio"))):
        buf.write(f"{int(row[0])},{row[1]:.17g},{row[2]:.17g},{row[3]:.17g}\n")
    atomic_write_text(path, buf.getvalue())


# ---------------------------------------------------------------------------
# thresholds


@dataclasses.dataclass(frozen=True)
class ThresholdPolicy:
    """How per-cell angle thresholds are derived from the initial mesh.

    ``global`` uses ``alpha_thr`` everywhere, ``relative`` uses ``nu`` times
    each cell's initial minimum angle, and ``combined`` uses ``alpha_thr`` for
    cells whose initial minimum angle exceeds it and the relative value
    elsewhere.
    """

    kind: str = "global"
    alpha_thr: float = 0.436
    nu: float = 0.25

    def __post_init__(self) -> None:
        if self.kind not in ("global", "relative", "combined"):
            raise ValueError(f"unknown threshold policy {self.kind!r}")
        if self.kind in ("relative", "combined") and not 0.0 < self.nu < 1.0:
            raise ValueError(f"relative tolerance nu must lie in (0, 1), got {self.nu}")
        if self.kind in ("global", "combined") and not self.alpha_thr > 0.0:
            raise ValueError(f"alpha_thr must be positive, got {self.alpha_thr}")

    def check_dimension(self, dim: int) -> None:
        if self.kind == "relative":
            return
        upper = math.pi / 3.0 if dim == 2 else REGULAR_TET_SOLID_ANGLE
        if not 0.0 < self.alpha_thr < upper:
            raise ValueError(
                f"alpha_thr must lie in (0, {upper:.6f}) for dimension {dim}, got {self.alpha_thr}"
            )


def build_thresholds(mesh: SimplicialMesh, policy: ThresholdPolicy) -> np.ndarray:
    """Per-constraint threshold vector of length ``(d + 1) * M``.

    Raises:
        InfeasibleMeshError: With a global policy whose threshold exceeds
            the smallest initial angle; the error names the worst cell.
    """
    policy.check_dimension(mesh.dim)
    min_angle = cell_angles(mesh).min(axis=1)
    if policy.kind == "global":
        worst = int(np.argmin(min_angle))
        if policy.alpha_thr > min_angle[worst]:
            raise InfeasibleMeshError(worst, float(min_angle[worst]), policy.alpha_thr)
        per_cell = np.full(mesh.cell_count, policy.alpha_thr)
    elif policy.kind == "relative":
        per_cell = policy.nu * min_angle
    else:
        per_cell = np.where(min_angle > policy.alpha_thr, policy.alpha_thr, policy.nu * min_angle)
    return np.repeat(per_cell, mesh.dim + 1)


# ---------------------------------------------------------------------------
# constraint system


def active_set(
    g: np.ndarray,
    epsilon: float,
    is_equality: np.ndarray | None = None,
    candidates: np.ndarray | None = None,
) -> np.ndarray:
    """Sorted indices of active constraints.

    Equality rows are always active; inequality row ``k`` is active iff
    ``|g_k| <= epsilon`` (and, if given, ``candidates[k]`` is true).
    """
    g = np.asarray(g)
    near = np.abs(g) <= epsilon
    if candidates is not None:
        near &= candidates
    if is_equality is not None:
        near |= is_equality
    return np.flatnonzero(near)


class ConstraintSystem:
    """Quality inequalities plus fixed-node equalities for one mesh topology.

    Thresholds and fixed positions are frozen at construction. The object is
    stateless otherwise; all methods take the coordinate vector explicitly.

    Quality rows of cells whose nodes are all fixed never become active: their
    angles cannot change and their gradients are linear combinations of the
    fixed-node rows.
    """

    def __init__(
        self,
        mesh: SimplicialMesh,
        thresholds: np.ndarray,
        fixed_nodes: Iterable[int] = (),
        epsilon: float = 1e-2,
    ) -> None:
        self.mesh = mesh
        self.dim = mesh.dim
        self.thresholds = np.array(thresholds, dtype=float)
        self.thresholds.setflags(write=False)
        if self.thresholds.shape != ((mesh.dim + 1) * mesh.cell_count,):
            raise ValueError("threshold vector length must be (d + 1) * cell_count")
        self.fixed_nodes = np.unique(np.asarray(list(fixed_nodes), dtype=np.int64))
        self.fixed_positions = mesh.points[self.fixed_nodes].reshape(-1).copy()
        self.epsilon = float(epsilon)
        self.n_quality = self.thresholds.size
        self.n_fixed = self.fixed_positions.size
        self.n_rows = self.n_quality + self.n_fixed
        self.is_equality = np.zeros(self.n_rows, dtype=bool)
        self.is_equality[self.n_quality :] = True
        fixed_mask = np.zeros(mesh.node_count, dtype=bool)
        fixed_mask[self.fixed_nodes] = True
        movable = ~fixed_mask[mesh.cells].all(axis=1)
        self.candidates = np.concatenate(
            [np.repeat(movable, mesh.dim + 1), np.zeros(self.n_fixed, dtype=bool)]
        )
        self._fixed_cols = (
            self.dim * np.repeat(self.fixed_nodes, self.dim) + np.tile(np.arange(self.dim), len(self.fixed_nodes))
        )

    @classmethod
    def from_policy(
        cls,
        mesh: SimplicialMesh,
        policy: ThresholdPolicy,
        fixed_nodes: Iterable[int] = (),
        epsilon: float = 1e-2,
    ) -> ConstraintSystem:
        return cls(mesh, build_thresholds(mesh, policy), fixed_nodes, epsilon)

    def angles(self, coords: np.ndarray) -> np.ndarray:
        return cell_angles(self.mesh, coords)

    def evaluate(self, coords: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        """Constraint values ``g``, optionally restricted to ``rows``."""
        coords = np.asarray(coords)
        if rows is None:
            quality = self.thresholds - self.angles(coords).reshape(-1)
            fixed = coords[self._fixed_cols] - self.fixed_positions
            return np.concatenate([quality, fixed])
        rows = np.asarray(rows, dtype=np.int64)
        out = np.empty(rows.size)
        qmask = rows < self.n_quality
        qrows = rows[qmask]
        if qrows.size:
            k = self.dim + 1
            cells, inv = np.unique(qrows // k, return_inverse=True)
            points = coords.reshape(self.mesh.points.shape)
            p = points[self.mesh.cells[cells]]
            ang = triangle_angles_batch(p) if self.dim == 2 else tet_solid_angles_batch(p)
            out[qmask] = self.thresholds[qrows] - ang[inv.ravel(), qrows % k]
        frows = rows[~qmask] - self.n_quality
        out[~qmask] = coords[self._fixed_cols[frows]] - self.fixed_positions[frows]
        return out

    def jacobian(self, coords: np.ndarray, rows: np.ndarray) -> sparse.csr_matrix:
        """Rows of the constraint Jacobian, one per entry of ``rows``."""
        rows = np.asarray(rows, dtype=np.int64)
        d, k = self.dim, self.dim + 1
        ncols = d * self.mesh.node_count
        qpos = np.flatnonzero(rows < self.n_quality)
        fpos = np.flatnonzero(rows >= self.n_quality)
        r_idx, c_idx, vals = [], [], []
        if qpos.size:
            qrows = rows[qpos]
            cells, inv = np.unique(qrows // k, return_inverse=True)
            inv = inv.ravel()
            grads = cell_angle_gradients(self.mesh, coords, cells)  # (C, k, k, d)
            local = qrows % k
            entries = -grads[inv, local]  # (q, k, d)
            nodes = self.mesh.cells[cells][inv]  # (q, k)
            cols = d * nodes[:, :, None] + np.arange(d)
            r_idx.append(np.repeat(qpos, k * d))
            c_idx.append(cols.reshape(-1))
            vals.append(entries.reshape(-1))
        if fpos.size:
            r_idx.append(fpos)
            c_idx.append(self._fixed_cols[rows[fpos] - self.n_quality])
            vals.append(np.ones(fpos.size))
        if not r_idx:
            return sparse.csr_matrix((rows.size, ncols))
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(r_idx), np.concatenate(c_idx))),
            shape=(rows.size, ncols),
        )

    def active_set(self, g: np.ndarray) -> np.ndarray:
        return active_set(g, self.epsilon, self.is_equality, self.candidates)

    def row_info(self, row: int) -> tuple[str, int, int]:
        """``("quality", cell, local_vertex)`` or ``("fixed", node, component)``."""
        if row < self.n_quality:
            return "quality", row // (self.dim + 1), row % (self.dim + 1)
        f = row - self.n_quality
        return "fixed", int(self.fixed_nodes[f // self.dim]), f % self.dim


def evaluate_constraints(mesh: SimplicialMesh, system: ConstraintSystem) -> np.ndarray:
    if mesh.cell_count != system.mesh.cell_count:
        raise ValueError("mesh does not match the constraint system")
    return system.evaluate(mesh.coords)
