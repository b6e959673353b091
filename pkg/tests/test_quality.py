import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_simplex
from oracles import random_rotation, relative_error, simplex_angle_fd, solid_angle_vos
from meshguard.mesh import build_mesh
from meshguard.meshgen import ball, cube, disk, two_triangle_square, unit_square
from meshguard.quality import (
    REGULAR_TET_SOLID_ANGLE,
    ConstraintSystem,
    DegenerateSimplexError,
    InfeasibleMeshError,
    ThresholdPolicy,
    active_set,
    aspect_ratios,
    build_thresholds,
    cell_angles,
    evaluate_constraints,
    quality_report,
    tet_dihedral_angles_batch,
    tet_solid_angle_gradients,
    tet_solid_angles,
    triangle_angle_gradients,
    triangle_angles,
    write_quality_csv,
)

REGULAR_TET = np.array(
    [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
)
CORNER_TET = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])

seeds = st.integers(0, 2**32 - 1)


# -- triangles --------------------------------------------------------------


def test_triangle_examples():
    eq = triangle_angles([0, 0], [1, 0], [0.5, math.sqrt(3) / 2])
    assert np.allclose(eq, math.pi / 3, atol=1e-15)
    right = triangle_angles([0, 0], [1, 0], [0, 1])
    assert np.allclose(right, [math.pi / 2, math.pi / 4, math.pi / 4], atol=1e-15)


def test_degenerate_triangle():
    with pytest.raises(DegenerateSimplexError):
        triangle_angles([0, 0], [0, 0], [1, 1])
    with pytest.raises(DegenerateSimplexError):
        triangle_angle_gradients([0, 0], [1, 1], [2, 2])


@given(seeds)
def test_triangle_angle_sum(seed):
    p = random_simplex(np.random.default_rng(seed), 2, min_quality=1e-3)
    a = triangle_angles(*p)
    assert abs(a.sum() - math.pi) <= 1e-12
    assert np.all((a > 0) & (a < math.pi))


@given(seeds)
def test_triangle_gradients_match_fd(seed):
    p = random_simplex(np.random.default_rng(seed), 2)
    grads = triangle_angle_gradients(*p)
    fd = simplex_angle_fd(p)
    for a in range(3):
        assert relative_error(grads[a], fd[a]) <= 1e-6
    # translation invariance and the differentiated angle-sum identity
    assert np.abs(grads.sum(axis=1)).max() <= 1e-12 * np.abs(grads).max()
    assert np.abs(grads.sum(axis=0)).max() <= 1e-12 * np.abs(grads).max()


# -- tetrahedra -------------------------------------------------------------


def test_solid_angle_fixtures():
    assert np.abs(tet_solid_angles(*REGULAR_TET) - math.acos(23 / 27)).max() <= 1e-12
    assert REGULAR_TET_SOLID_ANGLE == pytest.approx(0.551286, abs=1e-6)
    assert abs(tet_solid_angles(*CORNER_TET)[0] - math.pi / 2) <= 1e-12


def test_degenerate_tet():
    flat = CORNER_TET.copy()
    flat[3] = [0.3, 0.3, 0.0]
    with pytest.raises(DegenerateSimplexError):
        tet_solid_angles(*flat)


@given(seeds)
def test_solid_angles_match_independent_formula(seed):
    p = random_simplex(np.random.default_rng(seed), 3, min_quality=1e-3)
    angles = tet_solid_angles(*p)
    for i in range(4):
        assert abs(angles[i] - solid_angle_vos(p, i)) <= 1e-10
    assert angles.sum() <= 2 * math.pi + 1e-12
    assert np.all(angles > 0)


@given(seeds)
def test_dihedral_relation(seed):
    p = random_simplex(np.random.default_rng(seed), 3, min_quality=1e-3)
    dih = tet_dihedral_angles_batch(p[None])
    angles = tet_solid_angles(*p)
    for i in range(4):
        total = sum(dih[tuple(sorted((i, j)))][0] for j in range(4) if j != i)
        assert abs(angles[i] - (total - math.pi)) <= 1e-12


@given(seeds)
def test_tet_gradients_match_fd(seed):
    p = random_simplex(np.random.default_rng(seed), 3)
    grads = tet_solid_angle_gradients(*p)
    fd = simplex_angle_fd(p)
    for a in range(4):
        assert relative_error(grads[a], fd[a]) <= 1e-6
    assert np.abs(grads.sum(axis=1)).max() <= 1e-12 * max(1.0, np.abs(grads).max())


@given(seeds)
def test_tet_gradients_rotate_with_the_cell(seed):
    rng = np.random.default_rng(seed)
    p = random_simplex(rng, 3)
    R = random_rotation(rng, 3)
    g = tet_solid_angle_gradients(*p)
    g_rot = tet_solid_angle_gradients(*(p @ R.T))
    assert np.abs(g_rot - g @ R.T).max() <= 1e-10 * max(1.0, np.abs(g).max())


# -- mesh-level -------------------------------------------------------------


def test_aspect_ratio_is_one_for_regular_cells():
    tri = build_mesh([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]], [[0, 1, 2]])
    assert aspect_ratios(tri)[0] == pytest.approx(1.0, abs=1e-14)
    tet = build_mesh(REGULAR_TET, [[0, 1, 2, 3]])
    assert aspect_ratios(tet)[0] == pytest.approx(1.0, abs=1e-14)
    right = build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    assert aspect_ratios(right)[0] > 1.0


def test_quality_csv(tmp_path):
    mesh = disk(4)
    write_quality_csv(quality_report(mesh), tmp_path / "q.csv")
    lines = (tmp_path / "q.csv").read_text().splitlines()
    assert lines[0] == "cell_id,min_angle,max_angle,aspect_ratio"
    assert len(lines) == mesh.cell_count + 1


# -- thresholds -------------------------------------------------------------


def test_global_thresholds():
    mesh = unit_square(3, crossed=True)  # min angle 45 degrees
    thr = build_thresholds(mesh, ThresholdPolicy("global", alpha_thr=0.436))
    assert thr.shape == (3 * mesh.cell_count,)
    assert np.all(thr == 0.436)


def test_relative_thresholds():
    mesh = build_mesh([[0, 0], [1, 0], [0.2, 0.05]], [[0, 1, 2]])
    amin = cell_angles(mesh).min()
    thr = build_thresholds(mesh, ThresholdPolicy("relative", nu=0.25))
    assert np.allclose(thr, 0.25 * amin)


def test_relative_threshold_of_given_cell():
    # isoceles triangle with base angles 0.4 rad
    h = math.tan(0.4)
    mesh = build_mesh([[0, 0], [2, 0], [1, h]], [[0, 1, 2]])
    assert cell_angles(mesh).min() == pytest.approx(0.4)
    assert np.allclose(build_thresholds(mesh, ThresholdPolicy("relative", nu=0.25)), 0.1)


def test_combined_thresholds():
    h = math.tan(0.4)
    mesh = build_mesh([[0, 0], [2, 0], [1, h], [1, -math.sqrt(3)]], [[0, 1, 2], [0, 3, 1]])
    thr = build_thresholds(mesh, ThresholdPolicy("combined", alpha_thr=0.3, nu=0.5))
    # the equilateral cell gets the global value, the flat cell (0.4 > 0.3) as well
    assert np.allclose(thr, 0.3)
    thr = build_thresholds(mesh, ThresholdPolicy("combined", alpha_thr=0.5, nu=0.5))
    assert np.allclose(thr[:3], 0.2) and np.allclose(thr[3:], 0.5)


def test_infeasible_global_names_worst_cell():
    h = math.tan(0.5)
    mesh = build_mesh([[0, 0], [2, 0], [1, h], [1, -math.sqrt(3)]], [[0, 3, 1], [0, 1, 2]])
    with pytest.raises(InfeasibleMeshError) as err:
        build_thresholds(mesh, ThresholdPolicy("global", alpha_thr=0.6))
    assert err.value.cell == 1
    assert "cell 1" in str(err.value)


def test_policy_validation():
    with pytest.raises(ValueError):
        ThresholdPolicy("relative", nu=1.5)
    with pytest.raises(ValueError):
        ThresholdPolicy("global", alpha_thr=1.2).check_dimension(2)
    with pytest.raises(ValueError):
        ThresholdPolicy("global", alpha_thr=0.6).check_dimension(3)
    with pytest.raises(ValueError):
        ThresholdPolicy("bogus")


# -- constraint system ------------------------------------------------------


def test_equilateral_values_and_fixed_rows():
    mesh = build_mesh([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]], [[0, 1, 2]])
    system = ConstraintSystem.from_policy(mesh, ThresholdPolicy("global", alpha_thr=0.436), [0])
    g = evaluate_constraints(mesh, system)
    assert g.shape == (3 + 2,)
    assert np.allclose(g[:3], 0.436 - math.pi / 3)
    assert np.all(g[3:] == 0.0)
    assert system.active_set(g).tolist() == [3, 4]


def test_row_equal_to_threshold_is_zero():
    mesh = two_triangle_square()
    system = ConstraintSystem.from_policy(mesh, ThresholdPolicy("global", alpha_thr=math.pi / 4))
    g = evaluate_constraints(mesh, system)
    zero_rows = np.flatnonzero(np.abs(g) < 1e-15)
    assert len(zero_rows) == 4  # the four 45 degree angles


def test_active_set_examples():
    g = np.full(10, -0.2)
    assert active_set(g, 1e-2).size == 0
    g[4] = -0.005
    assert active_set(g, 1e-2).tolist() == [4]
    eq = np.zeros(170, dtype=bool)
    eq[10:] = True
    g = np.concatenate([np.full(10, -0.5), np.zeros(160)])
    assert active_set(g, 1e-2, eq).tolist() == list(range(10, 170))


def test_fixed_node_rows_are_always_active():
    mesh = unit_square(4)
    fixed = mesh.boundary_nodes("left", "right", "bottom", "top")
    system = ConstraintSystem.from_policy(mesh, ThresholdPolicy("global", alpha_thr=0.3), fixed)
    x = mesh.coords.copy()
    x[2 * fixed[0]] += 0.5  # even when violated far outside epsilon
    active = system.active_set(system.evaluate(x))
    assert set(range(system.n_quality, system.n_rows)) <= set(active.tolist())
    assert system.n_fixed == 2 * len(fixed) == 32


def test_cells_with_only_fixed_nodes_never_activate():
    mesh = two_triangle_square()
    system = ConstraintSystem.from_policy(mesh, ThresholdPolicy("global", alpha_thr=math.pi / 4), range(4))
    g = system.evaluate(mesh.coords)
    active = system.active_set(g)
    assert active.tolist() == list(range(6, 14))


@pytest.mark.parametrize("make", [lambda: disk(4), lambda: cube(2)])
def test_jacobian_rows_match_fd(make, rng):
    mesh = make()
    system = ConstraintSystem.from_policy(mesh, ThresholdPolicy("relative", nu=0.5), [0, 3])
    x = mesh.coords + 1e-3 * rng.normal(size=mesh.coords.size)
    rows = np.array(sorted(rng.choice(system.n_quality, 12, replace=False).tolist() + [system.n_quality, system.n_rows - 1]))
    J = system.jacobian(x, rows).toarray()
    h = 1e-6
    for c in np.flatnonzero(np.abs(J).sum(axis=0)):
        e = np.zeros_like(x)
        e[c] = h
        fd = (system.evaluate(x + e, rows) - system.evaluate(x - e, rows)) / (2 * h)
        assert np.allclose(J[:, c], fd, rtol=1e-6, atol=1e-7)
    nnz = (J != 0).sum(axis=1)
    k = mesh.dim * (mesh.dim + 1)
    assert np.all(nnz[:-2] <= k) and nnz[-2:].tolist() == [1, 1]
    # subset evaluation agrees with full evaluation
    assert np.array_equal(system.evaluate(x, rows), system.evaluate(x)[rows])


def test_constraint_ordering_is_reproducible():
    a = ConstraintSystem.from_policy(ball(2), ThresholdPolicy("relative", nu=0.25))
    b = ConstraintSystem.from_policy(ball(2), ThresholdPolicy("relative", nu=0.25))
    assert np.array_equal(a.evaluate(a.mesh.coords), b.evaluate(b.mesh.coords))
    assert a.row_info(5) == ("quality", 1, 1)


@given(seeds, st.floats(0.1, 0.9))
def test_feasible_cells_bound_the_largest_angle(seed, frac):
    p = random_simplex(np.random.default_rng(seed), 2, min_quality=1e-3)
    a = triangle_angles(*p)
    thr = frac * a.min()  # all constraints hold
    assert a.max() <= math.pi - 2 * thr + 1e-12


@given(seeds, st.floats(0.1, 0.9))
def test_feasible_tets_bound_the_largest_solid_angle(seed, frac):
    p = random_simplex(np.random.default_rng(seed), 3, min_quality=1e-3)
    a = tet_solid_angles(*p)
    thr = frac * a.min()
    assert a.max() <= 2 * math.pi - 3 * thr + 1e-12
