import numpy as np
import pytest
from numpy.testing import assert_allclose

from pipbc.errors import StructuralError
from pipbc.storage import (
    DiagonalWeights,
    PhiFamily,
    SamplePlan,
    SeparableStorage,
    check_assumption3,
    dissipation_Q,
    incremental_storage,
    passive_output,
)
from pipbc.thermal import thermal_Q


def _quad_phi():
    return (lambda x: 0.5 * np.asarray(x, dtype=float) ** 2,)


def _quad_dphi():
    return (lambda x: np.asarray(x, dtype=float),)


def _quad_ddphi():
    return (lambda x: np.ones_like(np.asarray(x, dtype=float)),)


def fully_actuated_quadratic(d=1.0, x_star=2.0):
    phis = PhiFamily(_quad_phi(), _quad_dphi(), _quad_ddphi(), ((-5.0, 5.0),))
    return SeparableStorage(weights=DiagonalWeights([d]), phis=phis,
                            x_star=np.array([x_star]), zero_idx=(), act_idx=(0,))


def test_phifamily_rejects_wrong_derivative():
    with pytest.raises(StructuralError):
        PhiFamily(_quad_phi(), (lambda x: 2.0 * np.asarray(x, dtype=float),),
                  _quad_ddphi(), ((-1.0, 1.0),))


def test_phifamily_rejects_bad_stacked_map():
    with pytest.raises(StructuralError):
        PhiFamily(_quad_phi(), _quad_dphi(), _quad_ddphi(), ((-1.0, 1.0),),
                  Phi_stacked=lambda x: 2.0 * x)


def test_phifamily_allows_concave_candidates():
    # construction checks derivative consistency only; convexity is the
    # certifier's to reject
    fam = PhiFamily((lambda x: -np.asarray(x, dtype=float) ** 2,),
                    (lambda x: -2.0 * np.asarray(x, dtype=float),),
                    (lambda x: -2.0 * np.ones_like(np.asarray(x, dtype=float)),),
                    ((-1.0, 1.0),))
    assert fam.ddphi[0](0.3) == -2.0


def test_weights_must_be_positive():
    with pytest.raises(StructuralError):
        DiagonalWeights([1.0, 0.0])


def test_passive_output_vanishes_at_target():
    st = fully_actuated_quadratic()
    assert_allclose(passive_output(st, [[1.0]], np.array([2.0])), [0.0])


def test_passive_output_scalar_case():
    phis = PhiFamily(_quad_phi(), _quad_dphi(), _quad_ddphi(), ((-5.0, 5.0),))
    st = SeparableStorage(weights=DiagonalWeights([2.0]), phis=phis,
                          x_star=np.array([1.0]), zero_idx=(), act_idx=(0,))
    assert_allclose(passive_output(st, [[1.0]], np.array([3.0])), [4.0])


def test_passive_output_coupled_case():
    phis = PhiFamily(
        (lambda x: 0.25 * np.asarray(x, dtype=float) ** 4,) * 2,
        (lambda x: np.asarray(x, dtype=float) ** 3,) * 2,
        (lambda x: 3.0 * np.asarray(x, dtype=float) ** 2,) * 2,
        ((-5.0, 5.0), (-5.0, 5.0)),
    )
    st = SeparableStorage(weights=DiagonalWeights([1.0, 3.0]), phis=phis,
                          x_star=np.zeros(2), zero_idx=(), act_idx=(0, 1))
    G2 = np.array([[1.0, 0.0], [1.0, 1.0]])
    assert_allclose(passive_output(st, G2, np.ones(2)), [4.0, 3.0])


def test_incremental_storage_quadratic_completion():
    st = fully_actuated_quadratic(d=1.0, x_star=2.0)
    xs = np.linspace(-3.0, 4.0, 9)
    vals = np.array([incremental_storage(st, np.array([x])) for x in xs])
    assert_allclose(vals, 0.5 * (xs - 2.0) ** 2, atol=1e-12)
    assert incremental_storage(st, np.array([2.0])) == pytest.approx(0.0, abs=1e-14)
    assert incremental_storage(st, np.array([0.0])) == pytest.approx(2.0)


def test_incremental_storage_minimum_on_grid(tp1):
    # grid-minimum oracle around the target
    st = tp1.storage
    grid = np.stack(np.meshgrid(
        st.x_star[0] + np.linspace(-0.3, 0.3, 21),
        st.x_star[1] + np.linspace(-0.3, 0.3, 21), indexing="ij"), axis=-1).reshape(-1, 2)
    U = incremental_storage(st, grid)
    assert U.min() >= -1e-12
    at_star = incremental_storage(st, st.x_star)
    assert at_star == pytest.approx(0.0, abs=1e-14)
    assert U.min() >= at_star - 1e-12


def test_incremental_gradient_matches_storage_difference(tp1):
    st = tp1.storage
    rng = np.random.default_rng(3)
    for x in rng.uniform(-0.5, 0.5, size=(5, 2)):
        g_expect = st.grad_H(x) - st.grad_H(st.x_star)
        for j in range(2):
            h = 1e-6
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            fd = (incremental_storage(st, xp) - incremental_storage(st, xm)) / (2 * h)
            assert fd == pytest.approx(g_expect[j], rel=1e-5, abs=1e-7)


def test_dissipation_vanishes_at_target(tp1):
    assert dissipation_Q(tp1.storage, tp1.plant, tp1.x_star) == pytest.approx(0.0, abs=1e-12)


def test_dissipation_dominates_thermal_closed_form(tp1):
    rng = np.random.default_rng(11)
    X = rng.uniform(-0.8, 1.0, size=(200, 2))
    Q = dissipation_Q(tp1.storage, tp1.plant, X)
    Qt = thermal_Q(tp1.model, tp1.cert, X, tp1.x_star)
    assert np.all(Qt >= -1e-12)
    assert np.all(Q >= Qt - 1e-9)


def test_dissipation_positive_for_damped_ph(ph1):
    rng = np.random.default_rng(4)
    for x in rng.uniform(-1.0, 1.0, size=(50, 2)):
        if np.linalg.norm(x - ph1.x_star) < 1e-3:
            continue
        assert dissipation_Q(ph1.storage, ph1.plant, x) > 0.0


def test_sample_plan_deterministic():
    plan = SamplePlan(np.zeros(2), np.ones(2), 64, seed=9)
    assert_allclose(plan.draw(), plan.draw())
    with pytest.raises(StructuralError):
        SamplePlan(np.zeros(2), np.ones(2), 0)


def test_check_assumption3_passes_on_thermal(tp1):
    report = check_assumption3(tp1.storage, tp1.plant, tp1.sample_plan(10_000, seed=5))
    assert report.passed
    assert report.decay_margin <= 1e-9
    assert report.incremental_margin >= -1e-9
    assert report.phi_curvature_min >= -1e-9
    assert report.hu_midpoint_gap <= 1e-9


def test_check_assumption3_passes_on_ph(ph1):
    report = check_assumption3(ph1.storage, ph1.plant, ph1.sample_plan(5_000, seed=6))
    assert report.passed_items[0] and report.passed_items[1]


def test_check_assumption3_flags_concave_phi(tp1):
    broken_phis = PhiFamily(
        (lambda x: -np.asarray(x, dtype=float) ** 2,),
        (lambda x: -2.0 * np.asarray(x, dtype=float),),
        (lambda x: -2.0 * np.ones_like(np.asarray(x, dtype=float)),),
        ((-1.0, 1.0),))
    st = tp1.storage
    with pytest.warns(RuntimeWarning):
        broken = SeparableStorage(weights=st.weights, phis=broken_phis,
                                  x_star=st.x_star, zero_idx=st.zero_idx,
                                  act_idx=st.act_idx, H_u=st.H_u,
                                  grad_H_u=st.grad_H_u)
    report = check_assumption3(broken, tp1.plant, tp1.sample_plan(2_000, seed=8))
    assert not report.passed
    assert report.passed_items[3] is False
    idx, point = report.phi_curvature_witness
    assert idx == 0
    assert broken.phis.ddphi[0](point) < 0


def test_unactuated_storage_midpoint_gap_flags_concavity(tp1):
    st = tp1.storage

    def bad_H_u(x_u):
        x_u = np.asarray(x_u, dtype=float)
        return -np.sum(x_u ** 2, axis=-1)

    def bad_grad(x_u):
        return -2.0 * np.asarray(x_u, dtype=float)

    with pytest.warns(RuntimeWarning):
        broken = SeparableStorage(weights=st.weights, phis=st.phis,
                                  x_star=st.x_star, zero_idx=st.zero_idx,
                                  act_idx=st.act_idx, H_u=bad_H_u, grad_H_u=bad_grad)
    report = check_assumption3(broken, tp1.plant, tp1.sample_plan(2_000, seed=8))
    assert report.hu_midpoint_gap > 1e-9
    assert report.passed_items[3] is False
