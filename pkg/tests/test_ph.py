import numpy as np
import pytest
from numpy.testing import assert_allclose

from pipbc.errors import StructuralError
from pipbc.model import input_matrix
from pipbc.ph import (
    as_plant_model,
    build_ph_model,
    demidovich_margin,
    ph_field,
    verify_ph_assumptions,
)
from pipbc.storage import DiagonalWeights, PhiFamily, SamplePlan, SeparableStorage


def quadratic_storage(x_star=(0.0, 0.0)):
    phis = PhiFamily((lambda x: 0.5 * np.asarray(x, dtype=float) ** 2,),
                     (lambda x: np.asarray(x, dtype=float),),
                     (lambda x: np.ones_like(np.asarray(x, dtype=float)),),
                     ((-5.0, 5.0),))
    return SeparableStorage(
        weights=DiagonalWeights([1.0]), phis=phis, x_star=np.asarray(x_star, dtype=float),
        zero_idx=(0,), act_idx=(1,),
        H_u=lambda x_u: 0.5 * np.sum(np.asarray(x_u, dtype=float) ** 2, axis=-1),
        grad_H_u=lambda x_u: np.asarray(x_u, dtype=float))


def test_structural_validation():
    G = input_matrix([[0.0], [1.0]])
    H = quadratic_storage()
    with pytest.raises(StructuralError):
        build_ph_model([[0.0, 1.0], [1.0, 0.0]], np.zeros((2, 2)), G, H)  # not skew
    with pytest.raises(StructuralError):
        build_ph_model([[0.0, 1.0], [-1.0, 0.0]], [[0.0, 0.5], [0.0, 0.0]], G, H)
    with pytest.raises(StructuralError):
        build_ph_model([[0.0, 1.0], [-1.0, 0.0]], -0.1 * np.eye(2), G, H)


def test_field_pure_rotation():
    G = input_matrix([[0.0], [1.0]])
    model = build_ph_model([[0.0, 1.0], [-1.0, 0.0]], np.zeros((2, 2)), G,
                           quadratic_storage())
    x = np.array([0.7, -1.2])
    f = ph_field(model, x)
    assert_allclose(f, [x[1], -x[0]])
    g = model.hamiltonian.grad_H(x)
    assert abs(g @ f) <= 1e-12


def test_field_with_full_damping():
    G = input_matrix([[0.0], [1.0]])
    model = build_ph_model(np.zeros((2, 2)), np.eye(2), G, quadratic_storage())
    x = np.array([0.5, 0.5])
    g = model.hamiltonian.grad_H(x)
    assert g @ ph_field(model, x) == pytest.approx(-np.linalg.norm(x) ** 2)


def test_verify_assumptions_r_zero_margins_vanish():
    G = input_matrix([[0.0], [1.0]])
    model = build_ph_model([[0.0, 1.0], [-1.0, 0.0]], np.zeros((2, 2)), G,
                           quadratic_storage())
    plan = SamplePlan(-np.ones(2), np.ones(2), 500, seed=1)
    rep = verify_ph_assumptions(model, plan)
    assert abs(rep.decay_margin) <= 1e-12
    assert abs(rep.incremental_margin) <= 1e-12
    assert rep.passed


def test_verify_assumptions_semidefinite_damping():
    G = input_matrix([[0.0], [1.0]])
    model = build_ph_model([[0.0, 1.0], [-1.0, 0.0]], np.diag([1.0, 0.0]), G,
                           quadratic_storage())
    plan = SamplePlan(-np.ones(2), np.ones(2), 2000, seed=2)
    rep = verify_ph_assumptions(model, plan)
    assert rep.decay_margin <= 1e-12
    assert rep.incremental_margin <= 1e-12


def test_pinned_instance_passes(ph1):
    rep = verify_ph_assumptions(ph1.model, ph1.sample_plan(5000, seed=3))
    assert rep.passed
    # skew identity holds pointwise
    rng = np.random.default_rng(4)
    for x in rng.uniform(-2.0, 2.0, size=(50, 2)):
        g = ph1.storage.grad_H(x)
        assert abs(g @ ph1.model.J @ g) <= 1e-12 * max(1.0, g @ g)


def test_field_vanishes_where_gradient_does(ph1):
    # grad H(0) = 0 for the pinned instance
    assert_allclose(ph_field(ph1.model, np.zeros(2)), np.zeros(2), atol=1e-14)


def test_demidovich_margin_linear_plant():
    G = input_matrix([[0.0], [1.0]])
    model = build_ph_model(np.zeros((2, 2)), np.eye(2), G, quadratic_storage())
    plant = as_plant_model(model)
    plan = SamplePlan(-np.ones(2), np.ones(2), 20, seed=5)
    # f(x) = -x, so P Df + Df^T P = -2 P has top eigenvalue -2 for P = I
    assert demidovich_margin(np.eye(2), plant, plan) == pytest.approx(-2.0, abs=1e-6)
