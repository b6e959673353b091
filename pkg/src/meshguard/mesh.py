"""Simplicial meshes: representation, validation, cell measures and Gmsh I/O.

Node coordinates are the optimization variables. They are stored as an
``(N, d)`` array; :attr:`SimplicialMesh.coords` exposes the interleaved flat
vector ``[x1, y1, (z1), x2, ...]`` that all solvers operate on.
"""

from __future__ import annotations

import dataclasses
import os
import tempfile
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Raised for structurally invalid meshes or unreadable mesh files."""


class DegenerateCellError(MeshError):
    def __init__(self, cell: int, measure: float, tol: float) -> None:
        self.cell = cell
        self.measure = measure
        super().__init__(
            f"degenerate cell {cell}: signed measure {measure:.6e} <= tolerance {tol:.3e}"
        )


class UnsupportedElementError(MeshError):
    pass


DEGENERACY_FACTOR = 1e-14

# gmsh MSH 2.2 element type ids
_LINE, _TRIANGLE, _TETRAHEDRON, _POINT = 1, 2, 4, 15
_NODES_PER_TYPE = {_POINT: 1, _LINE: 2, _TRIANGLE: 3, _TETRAHEDRON: 4}


@dataclasses.dataclass(frozen=True, eq=False)
class SimplicialMesh:
    """Triangle (2D) or tetrahedron (3D) mesh.

    Attributes:
        points: Node coordinates, shape ``(N, d)``.
        cells: Cell connectivity, shape ``(M, d + 1)``, counterclockwise
            triangles / positively oriented tetrahedra.
        boundary: Boundary facets per named group, each of shape ``(F, d)``.
            A node belongs to a group iff it lies on one of its facets.
        physical_ids: Gmsh physical tag of every boundary group.
        node_ids: Original (file) node number of every node; the mesh is
            re-indexed to ``0..N-1`` in ascending file order.
        orientation_repairs: Number of cells whose orientation was flipped
            on construction.
    """

    points: np.ndarray
    cells: np.ndarray
    boundary: dict[str, np.ndarray] = dataclasses.field(default_factory=dict)
    physical_ids: dict[str, int] = dataclasses.field(default_factory=dict)
    node_ids: np.ndarray | None = None
    orientation_repairs: int = 0

    def __post_init__(self) -> None:
        points = np.array(self.points, dtype=float)
        cells = np.array(self.cells, dtype=np.int64)
        if points.ndim != 2 or points.shape[1] not in (2, 3):
            raise MeshError(f"points must have shape (N, 2) or (N, 3), got {points.shape}")
        dim = points.shape[1]
        if cells.ndim != 2 or cells.shape[1] != dim + 1:
            cells = cells.reshape(-1, dim + 1)
        boundary = {
            name: np.asarray(f, dtype=np.int64).reshape(-1, dim)
            for name, f in self.boundary.items()
        }
        node_ids = (
            np.arange(1, len(points) + 1, dtype=np.int64)
            if self.node_ids is None
            else np.asarray(self.node_ids, dtype=np.int64)
        )
        physical_ids = dict(self.physical_ids)
        next_id = max(physical_ids.values(), default=0) + 1
        for name in boundary:
            if name not in physical_ids:
                physical_ids[name] = next_id
                next_id += 1
        points.setflags(write=False)
        cells.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "boundary", boundary)
        object.__setattr__(self, "node_ids", node_ids)
        object.__setattr__(self, "physical_ids", physical_ids)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def node_count(self) -> int:
        return self.points.shape[0]

    @property
    def cell_count(self) -> int:
        return self.cells.shape[0]

    @property
    def coords(self) -> np.ndarray:
        """Flat coordinate vector of length ``d * N`` (read-only view)."""
        return self.points.reshape(-1)

    def with_coords(self, coords: np.ndarray) -> SimplicialMesh:
        """Return a copy of the mesh with new node coordinates."""
        points = np.array(coords, dtype=float).reshape(self.node_count, self.dim)
        return dataclasses.replace(self, points=points)

    def boundary_nodes(self, *groups: str) -> np.ndarray:
        """Sorted node indices belonging to any of ``groups``."""
        missing = [g for g in groups if g not in self.boundary]
        if missing:
            raise KeyError(f"unknown boundary group(s): {', '.join(missing)}")
        if not groups:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate([self.boundary[g].ravel() for g in groups]))

    @property
    def node_tags(self) -> dict[str, np.ndarray]:
        """Per-node boolean membership mask of every boundary group."""
        tags = {}
        for name, facets in self.boundary.items():
            mask = np.zeros(self.node_count, dtype=bool)
            mask[facets.ravel()] = True
            tags[name] = mask
        return tags

    def bounding_box_diameter(self) -> float:
        if self.node_count == 0:
            return 0.0
        return float(np.linalg.norm(self.points.max(axis=0) - self.points.min(axis=0)))

    def degeneracy_tolerance(self) -> float:
        return DEGENERACY_FACTOR * self.bounding_box_diameter() ** self.dim

    def validate(self) -> None:
        """Check index ranges, duplicates and non-degeneracy of all cells.

        Raises:
            MeshError: For empty meshes, out-of-range or duplicate indices.
            DegenerateCellError: For the first cell with a signed measure
                below the degeneracy tolerance.
        """
        if self.node_count == 0 or self.cell_count == 0:
            raise MeshError("mesh has no nodes or no cells")
        if self.cells.min() < 0 or self.cells.max() >= self.node_count:
            raise MeshError("cell index out of range [0, node_count)")
        ordered = np.sort(self.cells, axis=1)
        dup = np.flatnonzero((ordered[:, 1:] == ordered[:, :-1]).any(axis=1))
        if dup.size:
            raise MeshError(f"cell {dup[0]} has duplicate node indices {self.cells[dup[0]]}")
        for name, facets in self.boundary.items():
            if facets.size and (facets.min() < 0 or facets.max() >= self.node_count):
                raise MeshError(f"boundary group {name!r} references a missing node")
        measures = cell_measures(self)
        tol = self.degeneracy_tolerance()
        bad = np.flatnonzero(measures <= tol)
        if bad.size:
            raise DegenerateCellError(int(bad[0]), float(measures[bad[0]]), tol)


def _simplex_edges(points: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Edge vectors ``p_m - p_0`` of every cell, shape ``(M, d, d)``."""
    p = points[cells]
    return p[:, 1:, :] - p[:, :1, :]


def cell_measures(mesh: SimplicialMesh, coords: np.ndarray | None = None) -> np.ndarray:
    """Signed areas (2D) or volumes (3D) of all cells."""
    points = mesh.points if coords is None else np.asarray(coords).reshape(mesh.points.shape)
    e = _simplex_edges(points, mesh.cells)
    if mesh.dim == 2:
        return 0.5 * (e[:, 0, 0] * e[:, 1, 1] - e[:, 0, 1] * e[:, 1, 0])
    return np.einsum("ij,ij->i", e[:, 0], np.cross(e[:, 1], e[:, 2])) / 6.0


def cell_measure(mesh: SimplicialMesh, cell_index: int) -> float:
    """Signed measure of a single cell; negative values signal inversion."""
    if not 0 <= cell_index < mesh.cell_count:
        raise IndexError(f"cell index {cell_index} out of range")
    sub = dataclasses.replace(mesh, cells=mesh.cells[cell_index : cell_index + 1], boundary={})
    return float(cell_measures(sub)[0])


def cell_measure_gradients(mesh: SimplicialMesh, coords: np.ndarray | None = None) -> np.ndarray:
    """Derivative of every signed cell measure w.r.t. its vertices, shape ``(M, d+1, d)``."""
    points = mesh.points if coords is None else np.asarray(coords).reshape(mesh.points.shape)
    p = points[mesh.cells]
    grads = np.empty_like(p)
    if mesh.dim == 2:
        # cyclic: dA/dv_a = 0.5 * (y_b - y_c, x_c - x_b)
        for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            grads[:, a, 0] = 0.5 * (p[:, b, 1] - p[:, c, 1])
            grads[:, a, 1] = 0.5 * (p[:, c, 0] - p[:, b, 0])
    else:
        e = p[:, 1:, :] - p[:, :1, :]
        grads[:, 1] = np.cross(e[:, 1], e[:, 2]) / 6.0
        grads[:, 2] = np.cross(e[:, 2], e[:, 0]) / 6.0
        grads[:, 3] = np.cross(e[:, 0], e[:, 1]) / 6.0
        grads[:, 0] = -grads[:, 1:].sum(axis=1)
    return grads


def repair_orientation(points: np.ndarray, cells: np.ndarray) -> tuple[np.ndarray, int]:
    """Swap the last two nodes of every negatively oriented cell."""
    cells = np.array(cells, dtype=np.int64)
    dim = points.shape[1]
    probe = SimplicialMesh(points, cells.copy())
    flip = cell_measures(probe) < 0
    if flip.any():
        cells[flip, dim - 1], cells[flip, dim] = cells[flip, dim].copy(), cells[flip, dim - 1].copy()
    return cells, int(flip.sum())


def build_mesh(
    points: np.ndarray,
    cells: np.ndarray,
    boundary: dict[str, np.ndarray] | None = None,
    **kwargs,
) -> SimplicialMesh:
    """Construct a validated mesh, repairing cell orientation first."""
    points = np.asarray(points, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    if cells.size and (cells.min() < 0 or cells.max() >= len(points)):
        raise MeshError("cell index out of range [0, node_count)")
    cells, repairs = repair_orientation(points, cells)
    mesh = SimplicialMesh(points, cells, boundary or {}, orientation_repairs=repairs, **kwargs)
    mesh.validate()
    return mesh


def boundary_facets(mesh: SimplicialMesh) -> np.ndarray:
    """Facets (edges in 2D, faces in 3D) belonging to exactly one cell.

    Facets are oriented so that their normal points out of the domain.
    """
    d = mesh.dim
    if d == 2:
        local = [(1, 2), (2, 0), (0, 1)]
    else:
        local = [(1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1)]
    facets = np.concatenate([mesh.cells[:, list(f)] for f in local])
    key = np.sort(facets, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    return facets[counts[inverse] == 1]


# ---------------------------------------------------------------------------
# Gmsh MSH 2.2 ASCII


def _sections(text: str) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current: str | None = None
    body: list[str] = []
    for raw in text.splitlines():
        line = raw.strip()
        if current is None:
            if line.startswith("$"):
                current = line[1:]
                body = []
            continue
        if line == f"$End{current}":
            sections[current] = body
            current = None
        else:
            body.append(line)
    if current is not None:
        raise MeshError(f"unterminated section ${current}")
    return sections


def load_mesh(path: str | os.PathLike) -> SimplicialMesh:
    """Read a Gmsh MSH 2.2 ASCII file.

    Only nodes referenced by the top-dimensional cells are kept; they are
    renumbered ``0..N-1`` in ascending order of their file number, which is
    stored in :attr:`SimplicialMesh.node_ids`. Boundary groups are the
    physical groups of the lower-dimensional (line / triangle) elements.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MeshError(f"cannot read mesh file {path}: {exc}") from exc
    sections = _sections(text)
    for required in ("MeshFormat", "Nodes", "Elements"):
        if required not in sections:
            raise MeshError(f"{path}: missing ${required} section")
    fmt = sections["MeshFormat"][0].split()
    if not fmt or not fmt[0].startswith("2"):
        raise MeshError(f"{path}: unsupported MSH version {fmt[0] if fmt else '?'}, expected 2.2")
    if len(fmt) > 1 and fmt[1] != "0":
        raise MeshError(f"{path}: binary MSH files are not supported")

    names: dict[tuple[int, int], str] = {}
    for line in sections.get("PhysicalNames", [])[1:]:
        parts = line.split(maxsplit=2)
        names[(int(parts[0]), int(parts[1]))] = parts[2].strip().strip('"')

    try:
        node_lines = sections["Nodes"]
        n_nodes = int(node_lines[0])
        table = np.array([ln.split() for ln in node_lines[1 : n_nodes + 1]], dtype=float)
        if table.shape != (n_nodes, 4):
            raise ValueError("malformed node table")
        file_ids = table[:, 0].astype(np.int64)
        xyz = table[:, 1:]

        elem_lines = sections["Elements"]
        n_elem = int(elem_lines[0])
        elements: dict[int, list[tuple[int, list[int]]]] = {}
        for line in elem_lines[1 : n_elem + 1]:
            parts = [int(v) for v in line.split()]
            etype, ntags = parts[1], parts[2]
            if etype not in _NODES_PER_TYPE:
                raise UnsupportedElementError(f"{path}: unsupported element type {etype}")
            physical = parts[3] if ntags > 0 else 0
            nodes = parts[3 + ntags :]
            if len(nodes) != _NODES_PER_TYPE[etype]:
                raise ValueError(f"element line {line!r} has wrong node count")
            elements.setdefault(etype, []).append((physical, nodes))
    except UnsupportedElementError:
        raise
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}: parse failure: {exc}") from exc

    if _TETRAHEDRON in elements:
        dim, cell_type, facet_type = 3, _TETRAHEDRON, _TRIANGLE
    elif _TRIANGLE in elements:
        dim, cell_type, facet_type = 2, _TRIANGLE, _LINE
        if np.any(xyz[:, 2] != 0.0):
            raise MeshError(f"{path}: triangle mesh with nonzero z coordinates (surface meshes unsupported)")
    else:
        raise MeshError(f"{path}: no triangle or tetrahedron elements")

    cell_nodes = np.array([nodes for _, nodes in elements[cell_type]], dtype=np.int64)
    used = np.unique(cell_nodes)
    order = np.argsort(file_ids)
    sorted_ids = file_ids[order]
    pos = np.searchsorted(sorted_ids, used)
    if np.any(pos >= len(sorted_ids)) or np.any(sorted_ids[np.minimum(pos, len(sorted_ids) - 1)] != used):
        raise MeshError(f"{path}: element references an undefined node")
    points = xyz[order[pos], :dim]

    def renumber(a: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(used, a)
        if np.any(idx >= len(used)) or np.any(used[np.minimum(idx, len(used) - 1)] != a):
            raise MeshError(f"{path}: boundary element references a node outside the volume mesh")
        return idx

    cells = renumber(cell_nodes)
    boundary: dict[str, list] = {}
    physical_ids: dict[str, int] = {}
    for physical, nodes in elements.get(facet_type, []):
        if physical == 0:
            continue
        name = names.get((dim - 1, physical), str(physical))
        boundary.setdefault(name, []).append(nodes)
        physical_ids[name] = physical
    boundary_arr = {
        name: renumber(np.array(f, dtype=np.int64)) for name, f in boundary.items()
    }
    return build_mesh(points, cells, boundary_arr, physical_ids=physical_ids, node_ids=used)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_mesh(mesh: SimplicialMesh, path: str | os.PathLike) -> None:
    """Write ``mesh`` as Gmsh MSH 2.2 ASCII with 17 significant digits."""
    mesh.validate()
    d = mesh.dim
    facet_type, cell_type = (_LINE, _TRIANGLE) if d == 2 else (_TRIANGLE, _TETRAHEDRON)
    ids = mesh.node_ids
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat"]
    if mesh.boundary:
        out += ["$PhysicalNames", str(len(mesh.boundary))]
        out += [f'{d - 1} {mesh.physical_ids[name]} "{name}"' for name in mesh.boundary]
        out.append("$EndPhysicalNames")
    out += ["$Nodes", str(mesh.node_count)]
    pts = mesh.points if d == 3 else np.column_stack([mesh.points, np.zeros(mesh.node_count)])
    out += [f"{i} {x:.17g} {y:.17g} {z:.17g}" for i, (x, y, z) in zip(ids, pts)]
    out.append("$EndNodes")
    lines = []
    eid = 1
    for name, facets in mesh.boundary.items():
        tag = mesh.physical_ids[name]
        for f in facets:
            lines.append(f"{eid} {facet_type} 2 {tag} {tag} " + " ".join(str(ids[n]) for n in f))
            eid += 1
    for c in mesh.cells:
        lines.append(f"{eid} {cell_type} 2 0 1 " + " ".join(str(ids[n]) for n in c))
        eid += 1
    out += ["$Elements", str(len(lines)), *lines, "$EndElements", ""]
    try:
        atomic_write_text(path, "\n".join(out))
    except OSError as exc:
        raise MeshError(f"cannot write mesh file {path}: {exc}") from exc


def mesh_equal(a: SimplicialMesh, b: SimplicialMesh, rtol: float = 0.0) -> bool:
    """Structural equality of connectivity and tags; coordinates to ``rtol``."""
    if a.points.shape != b.points.shape or not np.array_equal(a.cells, b.cells):
        return False
    if a.boundary.keys() != b.boundary.keys():
        return False
    if any(not np.array_equal(a.boundary[k], b.boundary[k]) for k in a.boundary):
        return False
    scale = max(1.0, float(np.abs(a.points).max(initial=0.0)))
    return bool(np.all(np.abs(a.points - b.points) <= rtol * scale))


__all__ = [
    "DegenerateCellError",
    "MeshError",
    "SimplicialMesh",
    "UnsupportedElementError",
    "atomic_write_text",
    "boundary_facets",
    "build_mesh",
    "cell_measure",
    "cell_measure_gradients",
    "cell_measures",
    "load_mesh",
    "mesh_equal",
    "save_mesh",
]
