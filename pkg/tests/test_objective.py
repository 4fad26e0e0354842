"""Average costs, risk constraint, Lagrangian, max-oracle, evaluators."""

import numpy as np
import pytest

from risklqr.errors import StabilityError
from risklqr.gains import SparsityPattern
from risklqr.objective import (
    ConstraintSpec,
    CostSpec,
    ExactEvaluator,
    McEvaluator,
    MultiplierBox,
    Problem,
    average_cost_exact,
    average_cost_mc,
    build_risk_constraint,
    lagrangian,
    max_oracle,
    phi,
)
from risklqr.system import LtiSystem, NoiseModel

from conftest import make_scalar_problem, random_problem, scalar_cost


def test_exact_cost_identity_closed_loop():
    n = 3
    sys = LtiSystem(np.zeros((n, n)), np.eye(n))
    noise = NoiseModel.gaussian(np.zeros(n), np.eye(n))
    spec = CostSpec(np.eye(n), np.eye(n))
    K = np.zeros((n, n))
    assert average_cost_exact(sys, noise, K, spec) == pytest.approx(n, rel=1e-12)


def test_exact_cost_scalar_closed_form():
    p = make_scalar_problem()
    assert average_cost_exact(p.sys, p.noise, np.zeros((1, 1)), p.cost) == pytest.approx(
        4.0 / 3.0, rel=1e-12
    )


def test_exact_cost_with_mean_and_linear_term():
    sys = LtiSystem(np.zeros((1, 1)), np.eye(1))
    noise = NoiseModel.gaussian(np.ones(1), np.eye(1))
    spec = CostSpec(np.eye(1), np.zeros((1, 1)), q=np.array([2.0]))
    # stationary x is the previous noise: mean 1, variance 1 -> E x^2 + 2 xbar = 4
    assert average_cost_exact(sys, noise, np.zeros((1, 1)), spec) == pytest.approx(4.0, rel=1e-12)


def test_exact_cost_unstable_raises():
    p = make_scalar_problem()
    with pytest.raises(StabilityError):
        average_cost_exact(p.sys, p.noise, np.array([[-1.0]]), p.cost)


def test_mc_cost_offset_only():
    sys = LtiSystem(np.array([[0.5]]), np.array([[1.0]]))
    spec = CostSpec(np.eye(1), np.eye(1), offset=2.5)
    value = average_cost_mc(
        sys, NoiseModel.zero(1), np.zeros((1, 1)), spec, T=100, n_rollouts=3,
        burn_in=10, rng=np.random.default_rng(0),
    )
    assert value == pytest.approx(2.5, abs=1e-14)


def test_mc_cost_matches_exact_scalar():
    p = make_scalar_problem()
    value = average_cost_mc(
        p.sys, p.noise, np.zeros((1, 1)), p.cost, T=10**5, n_rollouts=8,
        burn_in=10**3, rng=np.random.default_rng(4),
    )
    assert value == pytest.approx(4.0 / 3.0, rel=0.05)


def test_mc_cost_divergence_is_inf():
    sys = LtiSystem(np.array([[2.0]]), np.array([[0.0]]))
    noise = NoiseModel.gaussian(np.zeros(1), np.eye(1))
    spec = CostSpec(np.eye(1), np.eye(1))
    value = average_cost_mc(sys, noise, np.zeros((1, 1)), spec, T=500, n_rollouts=2,
                            burn_in=0, rng=np.random.default_rng(0))
    assert value == np.inf


def test_mc_matches_exact_within_standard_errors():
    rng = np.random.default_rng(21)
    for _ in range(4):
        prob = random_problem(rng, n=int(rng.integers(1, 5)), m=2)
        K = np.zeros((prob.m, prob.n))
        exact = average_cost_exact(prob.sys, prob.noise, K, prob.cost)
        per = average_cost_mc(
            prob.sys, prob.noise, K, prob.cost, T=10**4, n_rollouts=16,
            burn_in=10**3, rng=np.random.default_rng(100), return_per_rollout=True,
        )
        se = per.std(ddof=1) / np.sqrt(per.size)
        assert abs(per.mean() - exact) <= 3.0 * se + 0.01 * abs(exact)


def test_risk_constraint_scalar_gaussian():
    noise = NoiseModel.gaussian(np.zeros(1), np.eye(1), qweight=np.eye(1))
    con = build_risk_constraint(np.eye(1), noise, delta=10.0, m=1)
    assert con.cost.Q[0, 0] == pytest.approx(4.0)
    assert con.cost.q[0] == pytest.approx(0.0)
    # bound = delta - m4 + 4 tr((WQ)^2) = 10 - 2 + 4
    assert con.bound == pytest.approx(12.0)


def test_risk_constraint_symmetric_noise_no_linear_term():
    noise = NoiseModel.bounded_uniform(np.array([1.0, 0.5]))
    con = build_risk_constraint(np.eye(2), noise, delta=1.0, m=1)
    np.testing.assert_array_equal(con.cost.q, np.zeros(2))


def test_risk_constraint_deterministic_noise():
    noise = NoiseModel.zero(2)
    con = build_risk_constraint(np.eye(2), noise, delta=0.7, m=1)
    np.testing.assert_array_equal(con.cost.Q, np.zeros((2, 2)))
    np.testing.assert_array_equal(con.cost.q, np.zeros(2))
    assert con.bound == pytest.approx(0.7)


def test_risk_constraint_requeights_noise():
    # noise statistics stored against identity, constraint built with 2I
    noise = NoiseModel.gaussian(np.zeros(1), np.eye(1))
    Q = 2.0 * np.eye(1)
    con = build_risk_constraint(Q, noise, delta=1.0, m=1)
    # m4 for weight 2I: 2 tr((W 2I)^2) = 8; 4 tr((WQ)^2) = 16
    assert con.bound == pytest.approx(1.0 - 8.0 + 16.0)


def test_lagrangian_zero_multiplier_reduces_to_cost():
    p = make_scalar_problem(k_constraint=True)
    K = np.zeros((1, 1))
    lam = MultiplierBox(10.0, np.zeros(1))
    assert lagrangian(p.sys, p.noise, K, p.cost, p.constraints, lam) == pytest.approx(
        4.0 / 3.0, rel=1e-12
    )


def test_lagrangian_scalar_combined_value():
    p = make_scalar_problem(k_constraint=True)
    K = np.zeros((1, 1))
    lam = MultiplierBox(10.0, np.array([2.0]))
    # combined Q = 3 -> 3 * 4/3 = 4, minus lambda * c = 10
    assert lagrangian(p.sys, p.noise, K, p.cost, p.constraints, lam) == pytest.approx(
        -6.0, rel=1e-12
    )


def test_lagrangian_cap_with_slack_below_cost():
    p = make_scalar_problem(k_constraint=True)  # constraint value 4/3 < bound 5
    K = np.zeros((1, 1))
    cap = 10.0
    value = lagrangian(p.sys, p.noise, K, p.cost, p.constraints, MultiplierBox(cap, np.array([cap])))
    assert value < average_cost_exact(p.sys, p.noise, K, p.cost)


def test_lagrangian_linear_in_multiplier():
    p = make_scalar_problem(k_constraint=True)
    K = np.array([[0.1]])
    rng = np.random.default_rng(0)
    cap = 10.0
    for _ in range(20):
        l1 = rng.uniform(0, cap, size=1)
        l2 = rng.uniform(0, cap, size=1)
        a = rng.uniform()
        mix = lagrangian(p.sys, p.noise, K, p.cost, p.constraints,
                         MultiplierBox(cap, a * l1 + (1 - a) * l2))
        parts = a * lagrangian(p.sys, p.noise, K, p.cost, p.constraints, MultiplierBox(cap, l1)) + (
            1 - a
        ) * lagrangian(p.sys, p.noise, K, p.cost, p.constraints, MultiplierBox(cap, l2))
        assert mix == pytest.approx(parts, rel=1e-9)


def test_max_oracle_bang_bang():
    sys = LtiSystem(np.array([[0.0]]), np.array([[1.0]]))
    noise = NoiseModel.gaussian(np.zeros(1), np.eye(1))
    K = np.zeros((1, 1))
    # constraint value is the stationary variance times Qc: here 1 * Qc
    violated = (ConstraintSpec(CostSpec(5.0 * np.eye(1), np.zeros((1, 1))), 3.0),)
    slack = (ConstraintSpec(CostSpec(2.0 * np.eye(1), np.zeros((1, 1))), 3.0),)
    boundary = (ConstraintSpec(CostSpec(3.0 * np.eye(1), np.zeros((1, 1))), 3.0),)
    assert max_oracle(sys, noise, K, violated, cap=10.0).values[0] == 10.0
    assert max_oracle(sys, noise, K, slack, cap=10.0).values[0] == 0.0
    assert max_oracle(sys, noise, K, boundary, cap=10.0).values[0] == 0.0


def test_phi_forms():
    p = make_scalar_problem()
    K = np.zeros((1, 1))
    base = average_cost_exact(p.sys, p.noise, K, p.cost)
    assert phi(p.sys, p.noise, K, p.cost, (), cap=7.0) == pytest.approx(base)
    slack = (ConstraintSpec(CostSpec(np.eye(1), np.zeros((1, 1))), 5.0),)
    assert phi(p.sys, p.noise, K, p.cost, slack, cap=7.0) == pytest.approx(base)
    tight = (ConstraintSpec(CostSpec(np.eye(1), np.zeros((1, 1))), 1.0),)
    violation = 4.0 / 3.0 - 1.0
    assert phi(p.sys, p.noise, K, p.cost, tight, cap=7.0) == pytest.approx(
        base + 7.0 * violation, rel=1e-12
    )


def test_max_oracle_is_argmax():
    p = make_scalar_problem(k_constraint=True)
    K = np.array([[0.05]])
    cap = 10.0
    best = phi(p.sys, p.noise, K, p.cost, p.constraints, cap)
    rng = np.random.default_rng(8)
    for _ in range(100):
        lam = MultiplierBox(cap, rng.uniform(0, cap, size=1))
        value = lagrangian(p.sys, p.noise, K, p.cost, p.constraints, lam)
        assert value <= best + 1e-9


def test_exact_evaluator_inf_convention():
    p = make_scalar_problem(k_constraint=True)
    ev = ExactEvaluator(p, cap=10.0)
    base, cons = ev.costs(np.array([[-1.0]]))
    assert base == np.inf
    assert np.all(np.isinf(cons))
    assert ev.phi(np.array([[-1.0]])) == np.inf


def test_mc_evaluator_batch_matches_sequential():
    p = make_scalar_problem(k_constraint=True)
    gains = [np.array([[k]]) for k in (0.0, 0.1, 0.3)]
    a = McEvaluator(p, cap=10.0, horizon=300, n_rollouts=3, entropy=9)
    batched = a.phi_many(gains)
    b = McEvaluator(p, cap=10.0, horizon=300, n_rollouts=3, entropy=9)
    sequential = np.array([b.phi(g) for g in gains])
    np.testing.assert_array_equal(batched, sequential)


def test_mc_evaluator_estimates_exact_phi():
    p = make_scalar_problem(k_constraint=True)
    exact_val = phi(p.sys, p.noise, np.zeros((1, 1)), p.cost, p.constraints, 10.0)
    ev = McEvaluator(p, cap=10.0, horizon=40_000, n_rollouts=8, entropy=3)
    assert ev.phi(np.zeros((1, 1))) == pytest.approx(exact_val, rel=0.05)


def test_mc_evaluator_divergence_inf():
    sys = LtiSystem(np.array([[2.0]]), np.array([[0.0]]))
    noise = NoiseModel.gaussian(np.zeros(1), np.eye(1))
    prob = Problem(sys, noise, SparsityPattern.full(1, 1), CostSpec(np.eye(1), np.eye(1)))
    ev = McEvaluator(prob, cap=1.0, horizon=400, n_rollouts=2, entropy=0)
    assert ev.phi(np.zeros((1, 1))) == np.inf


def test_risk_reformulation_matches_raw_conditional_variance():
    # simulate the scalar loop and average the squared deviation of the
    # quadratic stage cost from its one-step conditional mean
    rng = np.random.default_rng(42)
    f = 0.3  # closed-loop factor
    T = 10**5
    w = rng.standard_normal(T)
    x = np.empty(T)
    x[0] = 0.0
    for t in range(T - 1):
        x[t + 1] = f * x[t] + w[t]
    xhat = np.empty(T)
    xhat[0] = 0.0
    xhat[1:] = f * x[:-1]
    raw = np.mean((x**2 - (xhat**2 + 1.0)) ** 2)

    # equivalent average-cost form evaluated exactly: 4 E x^2 (Qc = 4 QWQ)
    var_x = 1.0 / (1.0 - f**2)
    m4, tr_wq2 = 2.0, 1.0
    reformulated = 4.0 * var_x + (m4 - 4.0 * tr_wq2)
    assert raw == pytest.approx(reformulated, rel=0.05)
