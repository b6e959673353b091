"""Analytic shape functionals with exact derivatives w.r.t. node coordinates.

These stand in for PDE-constrained objectives. Every term is a function of
the node coordinates only, so its derivative ``b`` is available in closed
form and the gradient deformation follows from a single elasticity solve.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence, Union

import numpy as np

from meshguard.mesh import SimplicialMesh, boundary_facets, cell_measure_gradients, cell_measures


@dataclasses.dataclass(frozen=True)
class ReferenceShape:
    """Star-shaped reference boundary ``|x - c| = R(direction)``.

    ``star`` (2D): ``R = radius * (1 + amplitude * cos(lobes * (theta - phase)))``.
    ``squeeze``: ``R = radius * (1 - amplitude * u_axis**2)`` with ``u`` the unit
    direction; flattens a circle/sphere along ``axis``.
    ``circle`` / ``sphere``: constant ``radius``.
    """

    kind: str = "circle"
    radius: float = 1.0
    amplitude: float = 0.0
    lobes: int = 5
    phase: float = 0.0
    axis: int = 1
    center: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("circle", "sphere", "star", "squeeze"):
            raise ValueError(f"unknown reference shape {self.kind!r}")

    def distance(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Radial signed distance of points ``x`` (shape ``(P, d)``) and its gradient."""
        d = x.shape[1]
        c = np.zeros(d) if self.center is None else np.asarray(self.center, dtype=float)
        y = x - c
        r = np.linalg.norm(y, axis=1)
        u = y / r[:, None]
        if self.kind in ("circle", "sphere"):
            return r - self.radius, u
        if self.kind == "star":
            if d != 2:
                raise ValueError("the star reference shape is two-dimensional")
            theta = np.arctan2(y[:, 1], y[:, 0])
            arg = self.lobes * (theta - self.phase)
            R = self.radius * (1.0 + self.amplitude * np.cos(arg))
            dR = -self.radius * self.amplitude * self.lobes * np.sin(arg)
            dtheta = np.column_stack([-y[:, 1], y[:, 0]]) / (r**2)[:, None]
            return r - R, u - dR[:, None] * dtheta
        ua = u[:, self.axis]
        R = self.radius * (1.0 - self.amplitude * ua**2)
        e = np.zeros(d)
        e[self.axis] = 1.0
        gradR = (-2.0 * self.radius * self.amplitude * ua / r)[:, None] * (e[None, :] - ua[:, None] * u)
        return r - R, u - gradR


@dataclasses.dataclass(frozen=True)
class Volume:
    """``weight / 2 * (vol - target)^2``; ``target=None`` means the initial volume."""

    target: float | None = None
    weight: float = 1.0


@dataclasses.dataclass(frozen=True)
class Barycenter:
    """``weight / 2 * |bc - target|^2``; ``target=None`` means the initial barycenter."""

    target: tuple[float, ...] | None = None
    weight: float = 1.0


@dataclasses.dataclass(frozen=True)
class Perimeter:
    """``weight`` times the total boundary length (2D) or area (3D)."""

    weight: float = 1.0


@dataclasses.dataclass(frozen=True)
class TargetDistance:
    """``weight / 2 * int_boundary dist(x, reference)^2`` with nodal (trapezoidal) quadrature."""

    reference: ReferenceShape = ReferenceShape()
    weight: float = 1.0


Term = Union[Volume, Barycenter, Perimeter, TargetDistance]


@dataclasses.dataclass(frozen=True)
class FunctionalSpec:
    terms: tuple[Term, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise ValueError("a functional needs at least one term")
        for term in self.terms:
            if term.weight < 0:
                raise ValueError(f"negative weight in {term}")

    def resolve(self, mesh: SimplicialMesh) -> FunctionalSpec:
        """Replace ``None`` targets by the values measured on ``mesh``."""
        terms = []
        for term in self.terms:
            if isinstance(term, Volume) and term.target is None:
                term = dataclasses.replace(term, target=volume(mesh))
            elif isinstance(term, Barycenter) and term.target is None:
                term = dataclasses.replace(term, target=tuple(barycenter(mesh)))
            terms.append(term)
        return FunctionalSpec(tuple(terms))


def volume(mesh: SimplicialMesh, coords: np.ndarray | None = None) -> float:
    return float(cell_measures(mesh, coords).sum())


def barycenter(mesh: SimplicialMesh, coords: np.ndarray | None = None) -> np.ndarray:
    points = mesh.points if coords is None else np.asarray(coords).reshape(mesh.points.shape)
    meas = cell_measures(mesh, points)
    centroids = points[mesh.cells].mean(axis=1)
    return (meas[:, None] * centroids).sum(axis=0) / meas.sum()


def _facet_measures(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Measures of facets ``p`` (shape ``(F, d, d)``) and their vertex gradients."""
    if p.shape[1] == 2:
        e = p[:, 1] - p[:, 0]
        length = np.linalg.norm(e, axis=1)
        t = e / length[:, None]
        return length, np.stack([-t, t], axis=1)
    u = p[:, 1] - p[:, 0]
    w = p[:, 2] - p[:, 0]
    n = np.cross(u, w)
    nn = np.linalg.norm(n, axis=1)
    nhat = n / nn[:, None]
    gb = 0.5 * np.cross(w, nhat)
    gc = 0.5 * np.cross(nhat, u)
    return 0.5 * nn, np.stack([-(gb + gc), gb, gc], axis=1)


class ShapeFunctional:
    """A :class:`FunctionalSpec` bound to one mesh topology.

    Unset volume / barycenter targets are taken from ``mesh``.
    """

    def __init__(self, mesh: SimplicialMesh, spec: FunctionalSpec) -> None:
        self.mesh = mesh
        self.spec = spec.resolve(mesh)
        self.facets = boundary_facets(mesh)
        self.boundary_nodes, inv = np.unique(self.facets, return_inverse=True)
        self.local_facets = inv.reshape(self.facets.shape)

    def _points(self, coords):
        if coords is None:
            return self.mesh.points
        return np.asarray(coords, dtype=float).reshape(self.mesh.points.shape)

    def value(self, coords: np.ndarray | None = None) -> float:
        points = self._points(coords)
        total = 0.0
        for term in self.spec.terms:
            if isinstance(term, Volume):
                total += 0.5 * term.weight * (volume(self.mesh, points) - term.target) ** 2
            elif isinstance(term, Barycenter):
                diff = barycenter(self.mesh, points) - np.asarray(term.target)
                total += 0.5 * term.weight * float(diff @ diff)
            elif isinstance(term, Perimeter):
                total += term.weight * float(_facet_measures(points[self.facets])[0].sum())
            elif isinstance(term, TargetDistance):
                meas, _ = _facet_measures(points[self.facets])
                dist, _ = term.reference.distance(points[self.boundary_nodes])
                nodal = (dist**2)[self.local_facets].mean(axis=1)
                total += 0.5 * term.weight * float(meas @ nodal)
            else:
                raise TypeError(f"unknown functional term {term!r}")
        return total

    def gradient(self, coords: np.ndarray | None = None) -> np.ndarray:
        points = self._points(coords)
        mesh = self.mesh
        d = mesh.dim
        grad = np.zeros_like(points)
        for term in self.spec.terms:
            if isinstance(term, Volume):
                dvol = cell_measure_gradients(mesh, points)
                coef = term.weight * (volume(mesh, points) - term.target)
                np.add.at(grad, mesh.cells, coef * dvol)
            elif isinstance(term, Barycenter):
                meas = cell_measures(mesh, points)
                vol = meas.sum()
                centroids = points[mesh.cells].mean(axis=1)
                bc = (meas[:, None] * centroids).sum(axis=0) / vol
                r = bc - np.asarray(term.target)
                dvol = cell_measure_gradients(mesh, points)
                per_cell = ((centroids - bc) @ r)[:, None, None] * dvol
                per_cell = per_cell + (meas / (d + 1))[:, None, None] * r[None, None, :]
                np.add.at(grad, mesh.cells, term.weight / vol * per_cell)
            elif isinstance(term, Perimeter):
                _, dmeas = _facet_measures(points[self.facets])
                np.add.at(grad, self.facets, term.weight * dmeas)
            elif isinstance(term, TargetDistance):
                meas, dmeas = _facet_measures(points[self.facets])
                dist, ddist = term.reference.distance(points[self.boundary_nodes])
                nodal = (dist**2)[self.local_facets].mean(axis=1)
                np.add.at(grad, self.facets, 0.5 * term.weight * nodal[:, None, None] * dmeas)
                coef = term.weight * (meas / d)[:, None] * dist[self.local_facets]  # (F, d)
                np.add.at(grad, self.facets, coef[:, :, None] * ddist[self.local_facets])
            else:
                raise TypeError(f"unknown functional term {term!r}")
        return grad.reshape(-1)


def evaluate_functional(mesh: SimplicialMesh, spec: FunctionalSpec) -> float:
    return ShapeFunctional(mesh, spec).value()


def functional_gradient(mesh: SimplicialMesh, spec: FunctionalSpec) -> np.ndarray:
    """Exact derivative of :func:`evaluate_functional` w.r.t. ``mesh.coords``."""
    return ShapeFunctional(mesh, spec).gradient()


def term_from_dict(data: dict) -> Term:
    """Build a functional term from its JSON form, e.g. ``{"type": "volume", "weight": 1}``."""
    data = dict(data)
    kind = data.pop("type")
    if kind == "volume":
        return Volume(**data)
    if kind == "barycenter":
        target = data.get("target")
        return Barycenter(target=None if target is None else tuple(target), weight=data.get("weight", 1.0))
    if kind == "perimeter":
        return Perimeter(**data)
    if kind == "target_distance":
        ref = dict(data.get("reference", {}))
        if ref.get("center") is not None:
            ref["center"] = tuple(ref["center"])
        return TargetDistance(reference=ReferenceShape(**ref), weight=data.get("weight", 1.0))
    raise ValueError(f"unknown functional term type {kind!r}")


def spec_from_list(items: Sequence[dict]) -> FunctionalSpec:
    return FunctionalSpec(tuple(term_from_dict(item) for item in items))


__all__ = [
    "Barycenter",
    "FunctionalSpec",
    "Perimeter",
    "ReferenceShape",
    "ShapeFunctional",
    "TargetDistance",
    "Volume",
    "barycenter",
    "evaluate_functional",
    "functional_gradient",
    "spec_from_list",
    "term_from_dict",
    "volume",
]
