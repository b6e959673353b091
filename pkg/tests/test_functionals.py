import numpy as np
import pytest

from meshguard.functionals import (
    Barycenter,
    FunctionalSpec,
    Perimeter,
    ReferenceShape,
    ShapeFunctional,
    TargetDistance,
    Volume,
    barycenter,
    evaluate_functional,
    functional_gradient,
    spec_from_list,
)
from meshguard.mesh import boundary_facets
from meshguard.meshgen import ball, disk, two_triangle_square

TERMS_2D = [
    Volume(target=2.5, weight=1.3),
    Barycenter(target=(0.1, -0.2), weight=2.0),
    Perimeter(weight=0.7),
    TargetDistance(ReferenceShape("star", amplitude=0.3, lobes=5, phase=0.2)),
    TargetDistance(ReferenceShape("squeeze", amplitude=0.4, axis=0)),
    TargetDistance(ReferenceShape("circle", radius=0.8, center=(0.05, 0.0))),
]
TERMS_3D = [
    Volume(target=3.0),
    Barycenter(target=(0.1, 0.0, -0.1)),
    Perimeter(),
    TargetDistance(ReferenceShape("squeeze", amplitude=0.5, axis=2)),
    TargetDistance(ReferenceShape("sphere", radius=1.2)),
]


def _fd_check(mesh, spec, rng, samples=40):
    f = ShapeFunctional(mesh, spec)
    x = mesh.coords + 0.01 * rng.normal(size=mesh.coords.size)
    b = f.gradient(x)
    h = 1e-6
    idx = rng.choice(x.size, samples, replace=False)
    fd = np.empty(samples)
    for n, i in enumerate(idx):
        e = np.zeros_like(x)
        e[i] = h
        fd[n] = (f.value(x + e) - f.value(x - e)) / (2 * h)
    scale = np.abs(b).max()
    assert np.abs(fd - b[idx]).max() <= 1e-6 * scale


@pytest.mark.parametrize("term", TERMS_2D, ids=lambda t: type(t).__name__)
def test_gradients_2d(term, rng):
    _fd_check(disk(5), FunctionalSpec((term,)), rng)


@pytest.mark.parametrize("term", TERMS_3D, ids=lambda t: type(t).__name__)
def test_gradients_3d(term, rng):
    _fd_check(ball(3), FunctionalSpec((term,)), rng)


def test_square_volume_examples():
    mesh = two_triangle_square()
    spec = FunctionalSpec((Volume(target=1.0),))
    assert evaluate_functional(mesh, spec) == 0.0
    assert not np.any(functional_gradient(mesh, spec))
    assert evaluate_functional(two_triangle_square(size=2.0), spec) == pytest.approx(4.5)


def test_barycenter_of_symmetric_disk():
    mesh = disk(6)
    spec = FunctionalSpec((Barycenter(target=(0.0, 0.0)),))
    assert np.allclose(barycenter(mesh), 0.0, atol=1e-15)
    assert evaluate_functional(mesh, spec) <= 1e-30


def test_default_targets_come_from_the_mesh():
    mesh = disk(4)
    spec = FunctionalSpec((Volume(), Barycenter()))
    assert evaluate_functional(mesh, spec) == 0.0
    assert np.abs(functional_gradient(mesh, spec)).max() <= 1e-14


def test_perimeter_interior_entries_vanish():
    mesh = disk(5)
    b = functional_gradient(mesh, FunctionalSpec((Perimeter(),))).reshape(-1, 2)
    interior = np.setdiff1d(np.arange(mesh.node_count), boundary_facets(mesh))
    assert not np.any(b[interior])
    assert np.any(b[np.unique(boundary_facets(mesh))])


def test_target_distance_zero_on_reference():
    mesh = disk(6)
    spec = FunctionalSpec((TargetDistance(ReferenceShape("circle", radius=1.0)),))
    assert evaluate_functional(mesh, spec) <= 1e-28


def test_spec_validation_and_json():
    with pytest.raises(ValueError):
        FunctionalSpec(())
    with pytest.raises(ValueError):
        FunctionalSpec((Perimeter(weight=-1.0),))
    spec = spec_from_list(
        [
            {"type": "volume", "weight": 2.0},
            {"type": "barycenter", "target": [0, 0]},
            {"type": "target_distance", "reference": {"kind": "star", "amplitude": 0.2, "center": [0, 0]}},
        ]
    )
    assert isinstance(spec.terms[2].reference.center, tuple)
    with pytest.raises(ValueError):
        spec_from_list([{"type": "curvature"}])
