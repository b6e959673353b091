import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meshguard.elasticity import (
    ElasticityParams,
    assemble_stiffness,
    element_matrices,
    fixed_dofs,
    gradient_deformation,
    solve_dirichlet,
)
from meshguard.functionals import FunctionalSpec, Volume, functional_gradient, volume
from meshguard.mesh import build_mesh, cell_measures
from meshguard.meshgen import cube, disk, unit_square


def test_rigid_translations_in_kernel():
    for mesh in (disk(4), cube(2)):
        K = assemble_stiffness(mesh, ElasticityParams(lambda_elas=0.7), validate=False)
        c = np.tile(np.arange(1.0, mesh.dim + 1), mesh.node_count)
        assert np.abs(K @ c).max() <= 1e-12


def test_symmetry():
    K = assemble_stiffness(disk(5), ElasticityParams(lambda_elas=2.0, delta_elas=0.3))
    assert abs(K - K.T).max() <= 1e-14


def test_mass_term_integrates_constants_exactly():
    mesh = disk(5)
    params = ElasticityParams(mu_elas=1.0, delta_elas=2.5)
    K = assemble_stiffness(mesh, params)
    c = np.tile([0.3, -1.2], mesh.node_count)
    assert c @ K @ c == pytest.approx(2.5 * cell_measures(mesh).sum() * (0.09 + 1.44), rel=1e-12)


@pytest.mark.parametrize("mesh", [unit_square(6), cube(3)], ids=["2d", "3d"])
def test_patch_test(mesh):
    rng = np.random.default_rng(3)
    d = mesh.dim
    B = rng.normal(size=(d, d))
    c = rng.normal(size=d)
    exact = (mesh.points @ B.T + c).reshape(-1)
    if d == 2:
        bnodes = mesh.boundary_nodes(*mesh.boundary)
    else:
        bnodes = np.flatnonzero(np.isclose(mesh.points, 0).any(axis=1) | np.isclose(mesh.points, 1).any(axis=1))
    dofs = fixed_dofs(mesh, bnodes)
    u = solve_dirichlet(mesh, ElasticityParams(mu_elas=1.0, lambda_elas=0.5), dofs, exact[dofs])
    assert np.abs(u - exact).max() <= 1e-10


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 1.0]), st.booleans())
def test_reduced_stiffness_is_positive_definite(seed, lam, weighted):
    rng = np.random.default_rng(seed)
    mesh = unit_square(4)
    fixed = mesh.boundary_nodes("left")
    K = assemble_stiffness(mesh, ElasticityParams(lambda_elas=lam, inverse_volume_weighting=weighted), fixed)
    v = rng.normal(size=K.shape[0])
    v[fixed_dofs(mesh, fixed)] = 0.0
    assert v @ K @ v > 0


def test_pure_neumann_needs_damping():
    with pytest.raises(ValueError):
        assemble_stiffness(disk(3), ElasticityParams())
    with pytest.raises(ValueError):
        ElasticityParams(mu_elas=0.0).validate(2, True)
    with pytest.raises(ValueError):
        ElasticityParams(lambda_elas=-1.0).validate(2, True)


def test_zero_derivative_gives_zero_deformation():
    mesh = disk(4)
    K = assemble_stiffness(mesh, ElasticityParams(delta_elas=1.0))
    assert np.array_equal(gradient_deformation(K, np.zeros(K.shape[0])), np.zeros(K.shape[0]))


def test_gradient_deformation_residual_and_descent(rng):
    mesh = unit_square(5)
    fixed = mesh.boundary_nodes("left", "bottom")
    fd = fixed_dofs(mesh, fixed)
    K = assemble_stiffness(mesh, ElasticityParams(), fixed)
    b = rng.normal(size=K.shape[0])
    G = gradient_deformation(K, b, fd)
    free = np.ones(b.size, dtype=bool)
    free[fd] = False
    assert np.all(G[fd] == 0.0)
    r = (K @ G - b)[free]
    assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm(b[free])
    assert b @ G == pytest.approx(G @ K @ G, rel=1e-9)
    assert b @ G > 0


def test_volume_descent_on_free_disk():
    mesh = disk(5)
    spec = FunctionalSpec((Volume(target=2.0),))
    K = assemble_stiffness(mesh, ElasticityParams(delta_elas=1.0))
    G = gradient_deformation(K, functional_gradient(mesh, spec))
    J0 = 0.5 * (volume(mesh) - 2.0) ** 2
    J1 = 0.5 * (volume(mesh, mesh.coords - 1e-2 * G) - 2.0) ** 2
    assert J1 < J0


def test_inverse_volume_weighting_scales_elements():
    mesh = build_mesh([[0, 0], [1, 0], [0, 1], [3, 0], [0, 3]], [[0, 1, 2], [1, 3, 4]])
    params = ElasticityParams(lambda_elas=0.5, delta_elas=0.2)
    plain = element_matrices(mesh, params)
    weighted = element_matrices(mesh, ElasticityParams(lambda_elas=0.5, delta_elas=0.2, inverse_volume_weighting=True))
    vol = cell_measures(mesh)
    assert np.allclose(weighted, plain / vol[:, None, None], rtol=1e-13)
    assert np.abs(weighted[0]).max() / np.abs(weighted[1]).max() > np.abs(plain[0]).max() / np.abs(plain[1]).max()
