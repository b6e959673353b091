"""Small mesh generators for tests, demos and desk experiments."""

from __future__ import annotations

import dataclasses
import itertools
import math

import numpy as np
from scipy.spatial import Delaunay

from meshguard.mesh import SimplicialMesh, boundary_facets, build_mesh


def _with_boundary(mesh: SimplicialMesh, groups: dict[str, np.ndarray] | None = None) -> SimplicialMesh:
    boundary = {"boundary": boundary_facets(mesh)} if groups is None else groups
    return dataclasses.replace(mesh, boundary=boundary)


def two_triangle_square(size: float = 1.0) -> SimplicialMesh:
    """Unit square split along its diagonal into two triangles."""
    pts = size * np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    mesh = build_mesh(pts, [[0, 1, 2], [0, 2, 3]])
    return _with_boundary(mesh)


def unit_square(n: int, crossed: bool = False) -> SimplicialMesh:
    """Structured ``n x n`` square mesh of ``[0, 1]^2``.

    Boundary groups ``left``, ``right``, ``bottom`` and ``top``. With
    ``crossed`` each square is split into four triangles around its center
    (all angles 45 or 90 degrees), otherwise into two.
    """
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    pts = np.column_stack([X.ravel(), Y.ravel()])

    def node(i, j):
        return j * (n + 1) + i

    cells = []
    if crossed:
        centers = []
        for j in range(n):
            for i in range(n):
                c = len(pts) + len(centers)
                centers.append([(xs[i] + xs[i + 1]) / 2, (xs[j] + xs[j + 1]) / 2])
                a, b, cc, d = node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)
                cells += [[a, b, c], [b, cc, c], [cc, d, c], [d, a, c]]
        pts = np.vstack([pts, centers])
    else:
        for j in range(n):
            for i in range(n):
                a, b, cc, d = node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)
                cells += [[a, b, cc], [a, cc, d]]
    mesh = build_mesh(pts, np.array(cells))
    facets = boundary_facets(mesh)
    mid = pts[facets].mean(axis=1)
    groups = {
        "left": facets[np.isclose(mid[:, 0], 0.0)],
        "right": facets[np.isclose(mid[:, 0], 1.0)],
        "bottom": facets[np.isclose(mid[:, 1], 0.0)],
        "top": facets[np.isclose(mid[:, 1], 1.0)],
    }
    return _with_boundary(mesh, groups)


def disk(n_rings: int = 18, radius: float = 1.0) -> SimplicialMesh:
    """Disk mesh from concentric rings of ``6 k`` nodes, Delaunay-triangulated.

    Gives about ``6 n_rings**2`` nearly equilateral triangles. The single
    boundary group is ``boundary``.
    """
    pts = [np.zeros(2)]
    for k in range(1, n_rings + 1):
        m = 6 * k
        theta = 2 * math.pi * (np.arange(m) + 0.5 * (k % 2)) / m
        pts.append(radius * k / n_rings * np.column_stack([np.cos(theta), np.sin(theta)]))
    pts = np.vstack(pts)
    tri = Delaunay(pts)
    return _with_boundary(build_mesh(pts, tri.simplices))


def annulus(n_rings: int = 8, inner: float = 0.5, outer: float = 1.5, n_inner: int = 24) -> SimplicialMesh:
    """Annulus mesh with boundary groups ``inner`` and ``outer``."""
    pts = []
    for k in range(n_rings + 1):
        r = inner + (outer - inner) * k / n_rings
        m = int(round(n_inner * r / inner))
        theta = 2 * math.pi * (np.arange(m) + 0.5 * (k % 2)) / m
        pts.append(r * np.column_stack([np.cos(theta), np.sin(theta)]))
    pts = np.vstack(pts)
    tri = Delaunay(pts)
    cells = tri.simplices
    centroid = pts[cells].mean(axis=1)
    cells = cells[np.linalg.norm(centroid, axis=1) > inner * 1.0001]
    mesh = build_mesh(pts, cells)
    facets = boundary_facets(mesh)
    rad = np.linalg.norm(pts[facets].mean(axis=1), axis=1)
    mid = 0.5 * (inner + outer)
    return _with_boundary(mesh, {"inner": facets[rad < mid], "outer": facets[rad >= mid]})


def _kuhn_cube(n: int) -> tuple[np.ndarray, np.ndarray]:
    xs = np.linspace(-1.0, 1.0, n + 1)
    X, Y, Z = np.meshgrid(xs, xs, xs, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def node(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    cells = []
    unit = np.eye(3, dtype=int)
    for i, j, k in itertools.product(range(n), repeat=3):
        base = np.array([i, j, k])
        for perm in itertools.permutations(range(3)):
            path = [base, base + unit[perm[0]], base + unit[perm[0]] + unit[perm[1]], base + 1]
            cells.append([node(*v) for v in path])
    return pts, np.array(cells)


def ball(n: int = 9, radius: float = 1.0) -> SimplicialMesh:
    """Ball mesh: Kuhn-subdivided cube ``[-1, 1]^3`` mapped smoothly onto a ball.

    Has ``6 n**3`` tetrahedra (``n = 9`` gives 4374). The single boundary
    group is ``boundary``.
    """
    pts, cells = _kuhn_cube(n)
    x, y, z = pts.T
    mapped = np.column_stack(
        [
            x * np.sqrt(1 - y**2 / 2 - z**2 / 2 + y**2 * z**2 / 3),
            y * np.sqrt(1 - z**2 / 2 - x**2 / 2 + z**2 * x**2 / 3),
            z * np.sqrt(1 - x**2 / 2 - y**2 / 2 + x**2 * y**2 / 3),
        ]
    )
    return _with_boundary(build_mesh(radius * mapped, cells))


def cube(n: int = 4) -> SimplicialMesh:
    """Kuhn-subdivided unit cube ``[0, 1]^3``."""
    pts, cells = _kuhn_cube(n)
    return _with_boundary(build_mesh(0.5 * (pts + 1.0), cells))
