"""Optimizers: gdmax, sgdmax, stationarity, Moreau envelope, constant probes."""

import numpy as np
import pytest

from risklqr.errors import StabilityError, StepRejected
from risklqr.gains import SparsityPattern, StructuredGain, project_structure
from risklqr.numlin import solve_dare
from risklqr.objective import ExactEvaluator, MultiplierBox, average_cost_exact
from risklqr.optimize import (
    OptimizerConfig,
    check_stationarity,
    estimate_local_constants,
    gdmax,
    gdmax_step_rule,
    moreau_envelope,
    problem_phi_oracle,
    sgdmax,
    sgdmax_parameter_rule,
    PhiOracle,
)

from conftest import (
    TWO_STATE_CAP,
    make_scalar_problem,
    make_two_state_problem,
)

SCALAR_KSTAR = 0.2655644370746374
SCALAR_PSTAR = 1.1327822185373186


def scalar_config(**kw):
    base = dict(eta=0.05, eps=1e-6, cap=10.0, iterations=5000)
    base.update(kw)
    return OptimizerConfig(**base)


def test_gdmax_scalar_converges_to_riccati_optimum(scalar_problem):
    K0 = StructuredGain.zeros(scalar_problem.pattern)
    record = gdmax(scalar_problem, K0, scalar_config())
    assert record.converged
    assert record.final_gain.values[0, 0] == pytest.approx(SCALAR_KSTAR, abs=1e-5)
    assert record.cost[-1] == pytest.approx(SCALAR_PSTAR, rel=1e-6)


def test_gdmax_zero_iterations(scalar_problem):
    K0 = StructuredGain.zeros(scalar_problem.pattern)
    record = gdmax(scalar_problem, K0, scalar_config(iterations=0))
    assert not record.converged
    assert record.rows() == 1
    np.testing.assert_array_equal(record.final_gain.values, K0.values)


def test_gdmax_slack_constraint_identical_to_unconstrained():
    unconstrained = make_scalar_problem()
    constrained = make_scalar_problem(k_constraint=True)  # bound 5 is never active
    K0 = StructuredGain.zeros(unconstrained.pattern)
    cfg = scalar_config(iterations=200)
    rec_u = gdmax(unconstrained, K0, cfg)
    rec_c = gdmax(constrained, K0, cfg)
    assert rec_u.rows() == rec_c.rows()
    for a, b in zip(rec_u.gains, rec_c.gains):
        np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(rec_c.multipliers, np.zeros_like(rec_c.multipliers))


def test_gdmax_requires_stabilizing_start(scalar_problem):
    K0 = project_structure(np.array([[-1.0]]), scalar_problem.pattern)
    with pytest.raises(StabilityError):
        gdmax(scalar_problem, K0, scalar_config())


def test_gdmax_backtracks_destabilizing_steps(scalar_problem):
    # a step size this large would leave the stability region without repair
    K0 = StructuredGain.zeros(scalar_problem.pattern)
    record = gdmax(scalar_problem, K0, scalar_config(eta=50.0, iterations=50))
    assert record.step_halvings > 0
    assert np.all(record.spectral_radius < 1.0)


def test_gdmax_step_rejected_when_backtracking_disabled(scalar_problem):
    K0 = StructuredGain.zeros(scalar_problem.pattern)
    with pytest.raises(StepRejected):
        gdmax(scalar_problem, K0, scalar_config(eta=1e6, max_halvings=0))


def test_gdmax_iterates_remain_stable(two_state_problem):
    K0 = StructuredGain.zeros(two_state_problem.pattern)
    cfg = OptimizerConfig(eta=0.02, eps=1e-4, cap=TWO_STATE_CAP, iterations=4000)
    record = gdmax(two_state_problem, K0, cfg)
    assert record.converged
    assert np.all(record.spectral_radius < 1.0)


def test_gdmax_stopping_soundness(two_state_problem):
    K0 = StructuredGain.zeros(two_state_problem.pattern)
    cfg = OptimizerConfig(eta=0.02, eps=1e-4, cap=TWO_STATE_CAP, iterations=4000)
    record = gdmax(two_state_problem, K0, cfg)
    lam = MultiplierBox(TWO_STATE_CAP, record.multipliers[-1])
    report = check_stationarity(two_state_problem, record.final_gain, lam, 1e-4, lsmooth=10.0)
    assert report.grad_norm <= 1e-4


def test_sgdmax_model_based_near_gdmax(scalar_problem):
    # vanishing-noise comparison: exact evaluator isolates the perturbation noise
    K0 = StructuredGain.zeros(scalar_problem.pattern)
    ref = gdmax(scalar_problem, K0, scalar_config())
    cfg = scalar_config(mode="model-based", radius=0.1, samples=200, eta=0.015, iterations=250)
    record = sgdmax(scalar_problem, K0, cfg, seed=0)
    assert record.cost[-1] == pytest.approx(ref.cost[-1], rel=0.01)


def test_sgdmax_runs_exactly_fixed_iterations(scalar_problem):
    K0 = StructuredGain.zeros(scalar_problem.pattern)
    cfg = scalar_config(mode="model-based", radius=0.05, samples=10, iterations=15, eta=0.01)
    record = sgdmax(scalar_problem, K0, cfg, seed=0)
    assert record.iterations_used == 15
    assert record.rows() == 16  # iterates 0..J
    assert not record.converged


def test_sgdmax_deterministic_given_seed(scalar_problem):
    K0 = StructuredGain.zeros(scalar_problem.pattern)
    cfg = scalar_config(
        mode="model-free", radius=0.05, samples=8, iterations=10, eta=0.01,
        mc_horizon=200, mc_rollouts=2,
    )
    a = sgdmax(scalar_problem, K0, cfg, seed=3)
    b = sgdmax(scalar_problem, K0, cfg, seed=3)
    assert a.content_digest() == b.content_digest()
    c = sgdmax(scalar_problem, K0, cfg, seed=4)
    assert a.content_digest() != c.content_digest()


def test_sgdmax_tracks_best_iterate(scalar_problem):
    K0 = StructuredGain.zeros(scalar_problem.pattern)
    cfg = scalar_config(mode="model-based", radius=0.05, samples=20, iterations=40, eta=0.02)
    record = sgdmax(scalar_problem, K0, cfg, seed=1)
    assert record.best_gain is not None
    assert record.best_phi <= record.phi_eval[-1] + 1e-12
    assert 0 <= record.best_iteration <= record.iterations_used


def test_check_stationarity_at_unconstrained_optimum(scalar_problem):
    _, Kstar = solve_dare(
        scalar_problem.sys.A, scalar_problem.sys.B, scalar_problem.cost.Q, scalar_problem.cost.R
    )
    K = project_structure(Kstar, scalar_problem.pattern)
    report = check_stationarity(
        scalar_problem, K, MultiplierBox(10.0, np.zeros(0)), eps=1e-6, lsmooth=5.0
    )
    assert report.is_sp
    assert report.grad_norm <= 1e-6
    assert report.dual_residual == 0.0


def test_check_stationarity_flags_violation(two_state_problem):
    K0 = StructuredGain.zeros(two_state_problem.pattern)  # constraint violated at K = 0
    lam = MultiplierBox(TWO_STATE_CAP, np.zeros(1))
    report = check_stationarity(two_state_problem, K0, lam, eps=1e-4, lsmooth=1.0)
    assert not report.is_sp
    assert report.dual_residual > report.dual_tolerance


def test_check_stationarity_slack_constraint_dual_zero():
    p = make_scalar_problem(k_constraint=True)
    K = StructuredGain.zeros(p.pattern)  # value 4/3 < bound 5
    report = check_stationarity(p, K, MultiplierBox(10.0, np.zeros(1)), eps=1e-2, lsmooth=1.0)
    assert report.dual_residual == 0.0


def quad_oracle(nnz_shape):
    pattern = SparsityPattern.full(*nnz_shape)
    return PhiOracle(
        value=lambda K: 0.5 * float(np.sum(np.asarray(K) ** 2)),
        grad=lambda K: np.asarray(K, dtype=float),
        pattern=pattern,
    )


def test_moreau_envelope_upper_bounds_phi(scalar_problem):
    oracle = problem_phi_oracle(scalar_problem, cap=10.0)
    K = StructuredGain.zeros(scalar_problem.pattern)
    result = moreau_envelope(oracle, K, mu=0.1, lsmooth=20.0)
    phi_k = oracle.value(K.values)
    assert result.value <= phi_k + 1e-12


def test_moreau_envelope_quadratic_closed_form():
    oracle = quad_oracle((1, 2))
    K = StructuredGain(oracle.pattern, np.array([[1.0, -2.0]]))
    for mu in (0.25, 1.0, 4.0):
        result = moreau_envelope(oracle, K, mu=mu, lsmooth=1.0, steps=400)
        expected = 0.5 * float(np.sum(K.values**2)) / (1.0 + mu)
        assert result.value == pytest.approx(expected, rel=1e-8)
        np.testing.assert_allclose(result.prox_point.values, K.values / (1.0 + mu), rtol=1e-6)


def test_moreau_envelope_fixed_point_at_minimizer(scalar_problem):
    _, Kstar = solve_dare(
        scalar_problem.sys.A, scalar_problem.sys.B, scalar_problem.cost.Q, scalar_problem.cost.R
    )
    oracle = problem_phi_oracle(scalar_problem, cap=10.0)
    K = project_structure(Kstar, scalar_problem.pattern)
    result = moreau_envelope(oracle, K, mu=0.01, lsmooth=20.0)
    assert np.linalg.norm(result.prox_point.values - K.values) <= 1e-4


def test_moreau_envelope_nonincreasing_along_gdmax(scalar_problem):
    K0 = StructuredGain.zeros(scalar_problem.pattern)
    record = gdmax(scalar_problem, K0, scalar_config(eta=0.02, iterations=400))
    oracle = problem_phi_oracle(scalar_problem, cap=10.0)
    constants = estimate_local_constants(
        oracle, K0, probe_radius=0.05, n_probes=8, rng=np.random.default_rng(0)
    )
    values = [
        moreau_envelope(oracle, K, constants.mu0, lsmooth=constants.smoothness).value
        for K in record.gains[:: max(1, record.rows() // 20)]
    ]
    for prev, nxt in zip(values, values[1:]):
        assert nxt <= prev + 1e-6 * (1.0 + abs(prev))


def test_local_constants_quadratic_hook():
    oracle = PhiOracle(
        value=lambda K: float(np.sum(np.asarray(K) ** 2)),  # Hessian 2I
        grad=lambda K: 2.0 * np.asarray(K, dtype=float),
        pattern=SparsityPattern.full(1, 2),
    )
    K = StructuredGain(oracle.pattern, np.array([[0.3, -0.4]]))
    constants = estimate_local_constants(oracle, K, 0.1, 16, np.random.default_rng(5))
    assert constants.smoothness == pytest.approx(2.0, rel=0.1)
    assert constants.mu0 == pytest.approx(0.25, rel=0.1)


def test_local_constants_linear_hook():
    slope = 3.0
    oracle = PhiOracle(
        value=lambda K: slope * float(np.asarray(K).reshape(())),
        grad=lambda K: np.full((1, 1), slope),
        pattern=SparsityPattern.full(1, 1),
    )
    K = StructuredGain.zeros(oracle.pattern)
    constants = estimate_local_constants(oracle, K, 0.1, 8, np.random.default_rng(6))
    assert constants.lipschitz == pytest.approx(slope, rel=0.1)


def test_local_constants_safe_radius_deep_interior(scalar_problem):
    oracle = problem_phi_oracle(scalar_problem, cap=10.0)
    K = StructuredGain.zeros(scalar_problem.pattern)
    constants = estimate_local_constants(oracle, K, 0.01, 8, np.random.default_rng(7))
    assert constants.safe_radius == 0.01


def test_local_constants_radius_shrinks_near_boundary(scalar_problem):
    oracle = problem_phi_oracle(scalar_problem, cap=10.0)
    # closed loop 0.5 - k: k = -0.45 sits 0.05 from the stability boundary
    K = project_structure(np.array([[-0.45]]), scalar_problem.pattern)
    constants = estimate_local_constants(oracle, K, 1.0, 16, np.random.default_rng(8))
    assert constants.safe_radius < 1.0


def test_step_rules_are_positive_and_finite(scalar_problem):
    oracle = problem_phi_oracle(scalar_problem, cap=10.0)
    K = StructuredGain.zeros(scalar_problem.pattern)
    constants = estimate_local_constants(oracle, K, 0.05, 8, np.random.default_rng(9))
    eta = gdmax_step_rule(constants, eps=1e-3)
    assert 0.0 < eta <= constants.safe_radius
    envelope = moreau_envelope(oracle, K, constants.mu0, lsmooth=constants.smoothness)
    radius, eta2, iters = sgdmax_parameter_rule(constants, 1e-2, 100, 40.0, envelope.value)
    assert radius > 0 and eta2 > 0 and iters >= 1
