"""Shared fixtures: reference problems and random-instance helpers."""

import numpy as np
import pytest

from risklqr.gains import SparsityPattern, StructuredGain
from risklqr.objective import ConstraintSpec, CostSpec, Problem
from risklqr.system import LtiSystem, NoiseModel


def make_scalar_problem(k_constraint=False):
    """The running scalar example: a=0.5, b=1, q=r=1, unit gaussian noise.

    Closed-loop cost in closed form: (1 + k^2) / (1 - (0.5 - k)^2).
    """
    sys = LtiSystem(np.array([[0.5]]), np.array([[1.0]]))
    noise = NoiseModel.gaussian(np.zeros(1), np.eye(1))
    cost = CostSpec(np.eye(1), np.eye(1))
    constraints = ()
    if k_constraint:
        constraints = (ConstraintSpec(CostSpec(np.eye(1), np.zeros((1, 1))), 5.0),)
    return Problem(sys, noise, SparsityPattern.full(1, 1), cost, constraints)


def scalar_cost(k):
    """Closed-form average cost of the scalar example."""
    f = 0.5 - k
    if abs(f) >= 1.0:
        return np.inf
    return (1.0 + k**2) / (1.0 - f**2)


class ScalarPhi:
    """Closed-form evaluator for the scalar example (no constraints).

    Implements the evaluator surface the zero-order estimators expect.
    """

    def phi(self, K):
        return scalar_cost(float(np.asarray(K).reshape(())))

    def phi_many(self, Ks):
        k = np.array([float(np.asarray(K).reshape(())) for K in Ks])
        f = 0.5 - k
        out = np.full(k.shape, np.inf)
        ok = np.abs(f) < 1.0
        out[ok] = (1.0 + k[ok] ** 2) / (1.0 - f[ok] ** 2)
        return out


def random_stable_system(rng, n, m, rho_target=0.7):
    """Random system with open-loop spectral radius scaled to rho_target."""
    A = rng.normal(size=(n, n))
    rho = max(abs(np.linalg.eigvals(A)))
    A *= rho_target / max(rho, 1e-12)
    B = rng.normal(size=(n, m))
    return LtiSystem(A, B)


def random_psd(rng, n, scale=1.0):
    M = rng.normal(size=(n, n))
    return scale * (M @ M.T) / n + 1e-6 * np.eye(n)


def random_problem(rng, n, m, affine=False):
    """Random stable unconstrained problem; optionally with mean/linear terms."""
    sys = random_stable_system(rng, n, m)
    W = random_psd(rng, n, 0.5)
    wbar = rng.normal(size=n) * 0.3 if affine else np.zeros(n)
    noise = NoiseModel.gaussian(wbar, W)
    q = rng.normal(size=n) * 0.5 if affine else None
    cost = CostSpec(random_psd(rng, n) + np.eye(n), random_psd(rng, m) + np.eye(m), q)
    return Problem(sys, noise, SparsityPattern.full(m, n), cost)


# Two-state problem with a risk constraint that binds at the multiplier cap:
# the penalized optimum still violates the bound, so the minimax stationary
# pair sits at lambda = cap and the penalized objective is smooth there.
TWO_STATE_A = np.array([[0.7, 0.3], [0.0, 0.6]])
TWO_STATE_B = np.array([[1.0], [0.5]])
TWO_STATE_W = np.diag([0.2, 0.1])
TWO_STATE_DELTA_BAR = 0.21
TWO_STATE_CAP = 5.0


def make_two_state_problem():
    sys = LtiSystem(TWO_STATE_A, TWO_STATE_B)
    cost = CostSpec(np.eye(2), np.eye(1))
    noise = NoiseModel.gaussian(np.zeros(2), TWO_STATE_W, qweight=cost.Q)
    # risk reformulation built by hand: gaussian noise has zero third moment
    qc = CostSpec(4.0 * cost.Q @ TWO_STATE_W @ cost.Q, np.zeros((1, 1)))
    constraint = ConstraintSpec(qc, TWO_STATE_DELTA_BAR)
    return Problem(sys, noise, SparsityPattern.full(1, 2), cost, (constraint,))


@pytest.fixture
def scalar_problem():
    return make_scalar_problem()


@pytest.fixture
def two_state_problem():
    return make_two_state_problem()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def zero_gain(problem):
    return StructuredGain.zeros(problem.pattern)
