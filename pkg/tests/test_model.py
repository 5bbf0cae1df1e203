import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from pipbc.errors import DimensionError, NotAssignableError, StructuralError
from pipbc.model import (
    Dimensions,
    PlantModel,
    assemble_state,
    assignable_residual,
    input_matrix,
    left_annihilator,
    normalize_input_matrix,
    partition_state,
    solve_ustar,
)


def test_dimensions_require_n_greater_m():
    Dimensions(3, 1)
    with pytest.raises(StructuralError):
        Dimensions(2, 2)
    with pytest.raises(StructuralError):
        Dimensions(3, 0)


def test_input_matrix_standard_form():
    im = input_matrix([[0.0], [1.0]])
    assert im.zero_rows == (0,)
    assert im.actuated_rows == (1,)
    assert_allclose(im.G2, [[1.0]])


def test_input_matrix_shuffled_zero_rows():
    im = input_matrix([[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]])
    assert im.zero_rows == (1,)
    assert im.actuated_rows == (0, 2)
    assert_allclose(im.G2, [[1.0, 0.0], [0.0, 2.0]])


def test_input_matrix_rejects_wrong_zero_count():
    with pytest.raises(StructuralError):
        input_matrix([[1.0], [1.0]])


def test_input_matrix_rejects_singular_actuated_block():
    G = [[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]
    with pytest.raises(StructuralError):
        input_matrix(G)


def test_normalize_already_standard():
    res = normalize_input_matrix([[0.0], [1.0]])
    assert_allclose(res.T, np.eye(2))
    assert_allclose(res.S, [[1.0]])
    assert_allclose(res.normalized.G2, [[1.0]])
    assert not res.structure_destroying


def test_normalize_dense_column():
    # hand Gaussian elimination: subtract the pivot row from the top row
    res = normalize_input_matrix([[1.0], [1.0]])
    assert_allclose(res.T, [[1.0, -1.0], [0.0, 1.0]])
    assert_allclose(res.S, [[1.0]])
    assert_allclose(res.T @ np.array([[1.0], [1.0]]) @ res.S, [[0.0], [1.0]])
    assert res.structure_destroying


def test_normalize_shuffled_rows_is_permutation():
    G = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]])
    res = normalize_input_matrix(G)
    # permutation moving the zero row on top
    assert_allclose(res.T, [[0, 1, 0], [1, 0, 0], [0, 0, 1]])
    assert_allclose(res.S, [[1.0, 0.0], [0.0, 0.5]])
    assert_allclose(res.T @ G @ res.S, np.vstack([np.zeros((1, 2)), np.eye(2)]))
    assert not res.structure_destroying


def test_normalize_rejects_rank_deficient():
    with pytest.raises(StructuralError):
        normalize_input_matrix([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5), st.integers(1, 3), st.integers(0, 10_000))
def test_normalize_reaches_stacked_form(n, m, seed):
    if m >= n:
        m = n - 1
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(n, m))
    if np.linalg.matrix_rank(G) < m:
        return
    res = normalize_input_matrix(G)
    target = np.vstack([np.zeros((n - m, m)), np.eye(m)])
    assert_allclose(res.T @ G @ res.S, target, atol=1e-10)
    assert abs(np.linalg.det(res.T)) > 1e-12


def test_partition_standard():
    im = input_matrix([[0.0], [0.0], [1.0]])
    part = partition_state(np.array([1.0, 2.0, 3.0]), im)
    assert_allclose(part.x_u, [1.0, 2.0])
    assert_allclose(part.x_a, [3.0])


def test_partition_shuffled():
    im = input_matrix([[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]])
    part = partition_state(np.array([5.0, 6.0, 7.0]), im)
    assert_allclose(part.x_u, [6.0])
    assert_allclose(part.x_a, [5.0, 7.0])


def test_partition_zero_vector():
    im = input_matrix([[0.0], [1.0]])
    part = partition_state(np.zeros(2), im)
    assert_allclose(part.x_u, [0.0])
    assert_allclose(part.x_a, [0.0])


def test_partition_rejects_wrong_length():
    im = input_matrix([[0.0], [1.0]])
    with pytest.raises(DimensionError):
        partition_state(np.zeros(3), im)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_partition_assemble_roundtrip(n, seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, n))
    act = sorted(rng.choice(n, size=m, replace=False).tolist())
    G = np.zeros((n, m))
    G[act, :] = rng.normal(size=(m, m)) + 3.0 * np.eye(m)
    im = input_matrix(G)
    x = rng.normal(size=n)
    assert_allclose(assemble_state(partition_state(x, im)), x)


def test_left_annihilator_selector():
    im = input_matrix([[0.0], [1.0]])
    assert_allclose(left_annihilator(im), [[1.0, 0.0]])
    G4 = np.zeros((4, 2))
    G4[2:, :] = np.eye(2)
    assert_allclose(left_annihilator(input_matrix(G4)),
                    np.hstack([np.eye(2), np.zeros((2, 2))]))


def test_left_annihilator_dense_column():
    A = left_annihilator(np.array([[1.0], [1.0]]))
    assert A.shape == (1, 2)
    assert_allclose(A @ np.array([[1.0], [1.0]]), 0.0, atol=1e-12)
    # parallel to (1, -1) up to scale
    assert abs(A[0, 0] + A[0, 1]) < 1e-12


def _constant_plant(values, G):
    im = input_matrix(G)
    values = np.asarray(values, dtype=float)

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(values, x.shape).copy()

    return PlantModel(Dimensions(im.n, im.m), f, im)


def test_assignable_residual_and_ustar_on_thermal(tp1):
    assert np.linalg.norm(assignable_residual(tp1.plant, np.zeros(2))) <= 1e-10
    assert np.linalg.norm(assignable_residual(tp1.plant, tp1.x_star)) <= 1e-8
    bumped = tp1.x_star + np.array([1.0, 0.0])  # unactuated coordinate
    assert np.linalg.norm(assignable_residual(tp1.plant, bumped)) > 1e-3

    u = solve_ustar(tp1.plant, tp1.x_star)
    resid = tp1.plant.f(tp1.x_star) + tp1.model.G.entries @ u
    assert np.linalg.norm(resid) <= 1e-8


def test_solve_ustar_hand_case():
    plant = _constant_plant([0.0, -3.0], [[0.0], [1.0]])
    assert_allclose(solve_ustar(plant, np.zeros(2)), [3.0])


def test_solve_ustar_zero_at_open_loop_equilibrium(tp1):
    assert_allclose(solve_ustar(tp1.plant, np.zeros(2)), [0.0], atol=1e-10)


def test_solve_ustar_rejects_nonassignable():
    plant = _constant_plant([1.0, 0.0], [[0.0], [1.0]])
    with pytest.raises(NotAssignableError) as exc:
        solve_ustar(plant, np.zeros(2))
    assert exc.value.residual_norm == pytest.approx(1.0)


def test_equilibrium_consistency_bound(tp1, tp2, ph1):
    # |f(x*) + G u*| <= 10x the declared tolerance on every pinned plant
    for inst in (tp1, tp2, ph1):
        resid = inst.plant.f(inst.x_star) + inst.model.G.entries @ inst.u_star
        assert np.linalg.norm(resid) <= 1e-7
