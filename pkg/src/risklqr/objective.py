"""Average LQR-type costs, the mean-variance risk constraint, Lagrangian and max-oracle.

Two evaluation routes exist for every quantity: an exact model-based route
through stationary moments (Lyapunov solves), and a model-free Monte-Carlo
route through closed-loop rollouts. Optimizers interact with either route
through the evaluator classes at the bottom of this module, which map
destabilizing gains to +inf instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import StabilityError
from .gains import SparsityPattern
from .numlin import require_psd, solve_dlyap, spectral_radius, symmetrize
from .system import DIVERGENCE_CAP, LtiSystem, NoiseModel, sample_noise

_STABILITY_TOL = 1.0 - 1e-8


@dataclass(frozen=True)
class CostSpec:
    """Quadratic-plus-linear stage cost x'Qx + u'Ru + q'x + offset."""

    Q: np.ndarray
    R: np.ndarray
    q: Optional[np.ndarray] = None
    offset: float = 0.0

    def __post_init__(self):
        Q = require_psd(np.asarray(self.Q, dtype=float), "Q")
        R = require_psd(np.asarray(self.R, dtype=float), "R")
        q = np.zeros(Q.shape[0]) if self.q is None else np.asarray(self.q, dtype=float).reshape(-1)
        if q.size != Q.shape[0]:
            raise ValueError(f"linear term has size {q.size}, expected {Q.shape[0]}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True)
class ConstraintSpec:
    """An average-cost constraint: value(cost) <= bound."""

    cost: CostSpec
    bound: float

    def __post_init__(self):
        object.__setattr__(self, "bound", float(self.bound))


@dataclass(frozen=True)
class MultiplierBox:
    """Multipliers confined to the box [0, cap]^k."""

    cap: float
    values: np.ndarray

    def __post_init__(self):
        cap = float(self.cap)
        if cap <= 0:
            raise ValueError("multiplier cap must be positive")
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if np.any(values < -1e-12) or np.any(values > cap + 1e-12):
            raise ValueError(f"multipliers outside [0, {cap}]")
        values = np.clip(values, 0.0, cap)
        values.setflags(write=False)
        object.__setattr__(self, "cap", cap)
        object.__setattr__(self, "values", values)

    @staticmethod
    def zeros(cap: float, k: int) -> "MultiplierBox":
        return MultiplierBox(cap, np.zeros(k))


@dataclass(frozen=True)
class Problem:
    """A complete gain-evaluation bundle: plant, noise, pattern, objective, constraints.

    ``basis`` is an optional orthonormal n x n_r map onto the physically
    reachable subspace, for plants with a known conserved direction that pins
    a closed-loop eigenvalue on the unit circle for every gain (the microgrid
    benchmark's total tie-flow). Exact evaluation, gradients and stability
    checks then work on the reduced coordinates; rollouts always use the full
    plant.
    """

    sys: LtiSystem
    noise: NoiseModel
    pattern: SparsityPattern
    cost: CostSpec
    constraints: Tuple[ConstraintSpec, ...] = ()
    basis: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.pattern.shape != (self.sys.m, self.sys.n):
            raise ValueError(
                f"pattern shape {self.pattern.shape} does not match system "
                f"({self.sys.m}, {self.sys.n})"
            )
        if self.cost.n != self.sys.n or self.cost.m != self.sys.m:
            raise ValueError("cost dimensions do not match the system")
        for c in self.constraints:
            if c.cost.n != self.sys.n or c.cost.m != self.sys.m:
                raise ValueError("constraint dimensions do not match the system")
        if self.noise.dim != self.sys.n:
            raise ValueError("noise dimension does not match the system")
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.basis is not None:
            V = np.asarray(self.basis, dtype=float)
            if V.ndim != 2 or V.shape[0] != self.sys.n:
                raise ValueError(f"basis shape {V.shape} inconsistent with n={self.sys.n}")
            if not np.allclose(V.T @ V, np.eye(V.shape[1]), atol=1e-10):
                raise ValueError("basis columns must be orthonormal")
            object.__setattr__(self, "basis", V)

    @property
    def n(self) -> int:
        return self.sys.n

    @property
    def m(self) -> int:
        return self.sys.m

    def gain_values(self, K) -> np.ndarray:
        return np.asarray(getattr(K, "values", K), dtype=float)

    def closed_loop_radius(self, K) -> float:
        """Spectral radius on the physical subspace (reduced when a basis is set)."""
        Kv = self.gain_values(K)
        F = self.sys.A - self.sys.B @ Kv
        if self.basis is not None:
            F = self.basis.T @ F @ self.basis
        return spectral_radius(F)


# ---------------------------------------------------------------------------
# exact (model-based) evaluation


def _reduced_closed_loop(sys: LtiSystem, Kv: np.ndarray, basis: Optional[np.ndarray]):
    F = sys.A - sys.B @ Kv
    if basis is None:
        return F, None
    return basis.T @ F @ basis, basis


@dataclass(frozen=True)
class _Moments:
    """Stationary second-order description of a stable closed loop (reduced coords)."""

    F: np.ndarray
    Sigma: np.ndarray
    xbar: np.ndarray
    basis: Optional[np.ndarray]


def stationary_moments(
    sys: LtiSystem, noise: NoiseModel, K, basis: Optional[np.ndarray] = None
) -> _Moments:
    """Stationary covariance and mean of the closed loop; raises StabilityError."""
    Kv = np.asarray(getattr(K, "values", K), dtype=float)
    F, basis = _reduced_closed_loop(sys, Kv, basis)
    rho = spectral_radius(F)
    if rho >= _STABILITY_TOL:
        raise StabilityError(rho)
    if basis is None:
        W = noise.W
        wbar = noise.wbar
    else:
        W = symmetrize(basis.T @ noise.W @ basis)
        wbar = basis.T @ noise.wbar
        leak = np.linalg.norm(noise.wbar - basis @ wbar)
        if leak > 1e-9 * (1.0 + np.linalg.norm(noise.wbar)):
            raise ValueError("noise mean excites the deflated direction; cost is ill-defined")
    Sigma = solve_dlyap(F, W)
    xbar = np.linalg.solve(np.eye(F.shape[0]) - F, wbar)
    return _Moments(F, Sigma, xbar, basis)


def _spec_value(spec: CostSpec, Kv: np.ndarray, mom: _Moments) -> float:
    if mom.basis is None:
        Qeff = spec.Q + Kv.T @ spec.R @ Kv
        qeff = spec.q
    else:
        Kr = Kv @ mom.basis
        Qeff = mom.basis.T @ spec.Q @ mom.basis + Kr.T @ spec.R @ Kr
        qeff = mom.basis.T @ spec.q
    second = mom.Sigma + np.outer(mom.xbar, mom.xbar)
    return float(np.trace(Qeff @ second) + qeff @ mom.xbar + spec.offset)


def average_cost_exact(
    sys: LtiSystem,
    noise: NoiseModel,
    K,
    spec: CostSpec,
    basis: Optional[np.ndarray] = None,
) -> float:
    """Infinite-horizon average cost of u = -Kx from stationary moments.

    Raises StabilityError for destabilizing gains (callers that prefer the
    +inf convention should go through an evaluator).
    """
    Kv = np.asarray(getattr(K, "values", K), dtype=float)
    mom = stationary_moments(sys, noise, Kv, basis)
    return _spec_value(spec, Kv, mom)


def _noise_rows(model: NoiseModel, rng: np.random.Generator, t: int, count: int) -> np.ndarray:
    """One disturbance draw per row, vectorized across rows."""
    if model.kind == "zero":
        return np.zeros((count, model.dim))
    if model.kind == "gaussian":
        z = rng.standard_normal((count, model.factor.shape[1]))
        return model.wbar + z @ model.factor.T
    if model.kind == "uniform":
        return model.wbar + rng.uniform(-1.0, 1.0, (count, model.dim)) * model.half_widths
    if model.kind == "step_load":
        return np.tile(sample_noise(model, rng, t), (count, 1))
    raise ValueError(f"unknown noise kind {model.kind!r}")


def average_cost_mc(
    sys: LtiSystem,
    noise: NoiseModel,
    K,
    spec: CostSpec,
    T: int,
    n_rollouts: int,
    burn_in: int,
    rng: np.random.Generator,
    x0: Optional[np.ndarray] = None,
    return_per_rollout: bool = False,
):
    """Finite-horizon Monte-Carlo estimate of the average cost.

    Rollouts are simulated side by side (one vectorized time loop, noise
    drawn per step from the given stream), transients up to ``burn_in`` are
    discarded, and the rollout means are averaged. Returns +inf when any
    rollout diverges (the destabilized-gain sentinel); with
    ``return_per_rollout`` the per-rollout averages come back instead, so
    callers can form standard errors.
    """
    if not (T > burn_in >= 0):
        raise ValueError("need T > burn_in >= 0")
    if n_rollouts < 1:
        raise ValueError("need at least one rollout")
    Kv = np.asarray(getattr(K, "values", K), dtype=float)
    x0 = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float)
    F = sys.A - sys.B @ Kv
    Qeff = spec.Q + Kv.T @ spec.R @ Kv
    X = np.tile(x0, (n_rollouts, 1))
    acc = np.zeros(n_rollouts)
    alive = np.ones(n_rollouts, dtype=bool)
    has_lin = bool(np.any(spec.q))
    cap_sq = DIVERGENCE_CAP**2
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            sq = np.einsum("ri,ri->r", X, X)
            dead = ~np.isfinite(sq) | (sq > cap_sq)
            if dead.any():
                alive &= ~dead
                X[dead] = 0.0
                if not alive.any():
                    break
            if t >= burn_in:
                acc += np.einsum("ri,ij,rj->r", X, Qeff, X)
                if has_lin:
                    acc += X @ spec.q
            X = X @ F.T + _noise_rows(noise, rng, t, n_rollouts)
    per_rollout = acc / (T - burn_in) + spec.offset
    per_rollout[~alive] = np.inf
    if return_per_rollout:
        return per_rollout
    return float(per_rollout.mean()) if alive.all() else np.inf


def build_risk_constraint(
    Q: np.ndarray, noise: NoiseModel, delta: float, m: int
) -> ConstraintSpec:
    """Average-cost reformulation of the mean-variance risk bound.

    The conditional-variance risk with tolerance ``delta`` is equivalent to
    bounding the average of 4 x'QWQ x + 4 x'Q M3 by
    delta - m4 + 4 tr((WQ)^2), with the noise moments taken relative to Q.
    """
    Q = require_psd(np.asarray(Q, dtype=float), "Q")
    if not np.allclose(noise.qweight, Q, atol=1e-12):
        noise = noise.with_qweight(Q)
    W, M3, m4 = noise.W, noise.M3, noise.m4
    Qc = symmetrize(4.0 * Q @ W @ Q)
    qc = 4.0 * Q @ M3
    bound = float(delta) - m4 + 4.0 * float(np.trace((W @ Q) @ (W @ Q)))
    spec = CostSpec(Qc, np.zeros((m, m)), qc)
    return ConstraintSpec(spec, bound)


def combine_specs(
    base: CostSpec, constraints: Sequence[ConstraintSpec], lam: np.ndarray
) -> Tuple[CostSpec, float]:
    """Multiplier-weighted combined stage cost and the weighted bound sum."""
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.size != len(constraints):
        raise ValueError(f"{lam.size} multipliers for {len(constraints)} constraints")
    Q = base.Q.copy()
    R = base.R.copy()
    q = base.q.copy()
    offset = base.offset
    c_lam = 0.0
    for li, con in zip(lam, constraints):
        Q = Q + li * con.cost.Q
        R = R + li * con.cost.R
        q = q + li * con.cost.q
        offset += li * con.cost.offset
        c_lam += li * con.bound
    return CostSpec(symmetrize(Q), symmetrize(R), q, offset), c_lam


def lagrangian(
    sys: LtiSystem,
    noise: NoiseModel,
    K,
    base: CostSpec,
    constraints: Sequence[ConstraintSpec],
    lam: MultiplierBox,
    basis: Optional[np.ndarray] = None,
) -> float:
    """Exact Lagrangian value: combined-spec average cost minus the weighted bounds."""
    combined, c_lam = combine_specs(base, constraints, lam.values)
    return average_cost_exact(sys, noise, K, combined, basis) - c_lam


def constraint_values(
    sys: LtiSystem,
    noise: NoiseModel,
    K,
    constraints: Sequence[ConstraintSpec],
    basis: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Exact average-cost value of each constraint (shares one moment solve)."""
    Kv = np.asarray(getattr(K, "values", K), dtype=float)
    mom = stationary_moments(sys, noise, Kv, basis)
    return np.array([_spec_value(c.cost, Kv, mom) for c in constraints])


def max_oracle(
    sys: LtiSystem,
    noise: NoiseModel,
    K,
    constraints: Sequence[ConstraintSpec],
    cap: float,
    basis: Optional[np.ndarray] = None,
) -> MultiplierBox:
    """Exact inner maximizer over the multiplier box.

    The Lagrangian is linear in the multipliers, so each one sits at the cap
    when its constraint is violated and at zero otherwise (equality counts
    as satisfied).
    """
    values = constraint_values(sys, noise, K, constraints, basis)
    bounds = np.array([c.bound for c in constraints])
    lam = np.where(values > bounds, cap, 0.0)
    return MultiplierBox(cap, lam)


def phi(
    sys: LtiSystem,
    noise: NoiseModel,
    K,
    base: CostSpec,
    constraints: Sequence[ConstraintSpec],
    cap: float,
    basis: Optional[np.ndarray] = None,
) -> float:
    """Pointwise max of the Lagrangian over the box: base cost plus capped violations."""
    Kv = np.asarray(getattr(K, "values", K), dtype=float)
    mom = stationary_moments(sys, noise, Kv, basis)
    value = _spec_value(base, Kv, mom)
    for con in constraints:
        value += cap * max(_spec_value(con.cost, Kv, mom) - con.bound, 0.0)
    return value


# ---------------------------------------------------------------------------
# evaluators (the optimizer-facing +inf convention lives here)


class ExactEvaluator:
    """Model-based gain evaluation through stationary moments.

    Destabilizing gains yield +inf instead of an exception, so optimizers can
    reject steps gracefully.
    """

    mode = "model-based"

    def __init__(self, problem: Problem, cap: float):
        self.problem = problem
        self.cap = float(cap)

    def costs(self, K) -> Tuple[float, np.ndarray]:
        """(base value, per-constraint values); all +inf when unstable."""
        p = self.problem
        Kv = p.gain_values(K)
        k = len(p.constraints)
        try:
            mom = stationary_moments(p.sys, p.noise, Kv, p.basis)
        except StabilityError:
            return np.inf, np.full(k, np.inf)
        base = _spec_value(p.cost, Kv, mom)
        cons = np.array([_spec_value(c.cost, Kv, mom) for c in p.constraints])
        return base, cons

    def costs_many(self, Ks: Sequence[np.ndarray]):
        pairs = [self.costs(K) for K in Ks]
        return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])

    def oracle_multipliers(self, cons: np.ndarray) -> np.ndarray:
        bounds = np.array([c.bound for c in self.problem.constraints])
        return np.where(cons > bounds, self.cap, 0.0)

    def phi_parts(self, K) -> Tuple[float, float, np.ndarray]:
        """(phi, base value, constraint values)."""
        base, cons = self.costs(K)
        if not np.isfinite(base):
            return np.inf, base, cons
        bounds = np.array([c.bound for c in self.problem.constraints])
        viol = np.clip(cons - bounds, 0.0, None)
        return base + self.cap * float(viol.sum()), base, cons

    def phi(self, K) -> float:
        return self.phi_parts(K)[0]

    def phi_many(self, Ks: Sequence[np.ndarray]) -> np.ndarray:
        return np.array([self.phi(K) for K in Ks])


class McEvaluator:
    """Model-free gain evaluation from batched closed-loop rollouts.

    Evaluations are deterministic: every call consumes one ticket of an
    internal counter, and the noise stream of rollout r of ticket c is
    derived from (entropy, c, r). Batched evaluation therefore matches
    one-at-a-time evaluation bit for bit.
    """

    mode = "model-free"

    def __init__(
        self,
        problem: Problem,
        cap: float,
        horizon: int,
        n_rollouts: int,
        burn_in: Optional[int] = None,
        entropy: int = 0,
        x0: Optional[np.ndarray] = None,
    ):
        if horizon < 2:
            raise ValueError("horizon must be at least 2")
        self.problem = problem
        self.cap = float(cap)
        self.horizon = int(horizon)
        self.burn_in = int(horizon // 10) if burn_in is None else int(burn_in)
        if not (self.horizon > self.burn_in >= 0):
            raise ValueError("need horizon > burn_in >= 0")
        self.n_rollouts = int(n_rollouts)
        self.entropy = entropy  # int or sequence of ints (seed-ladder entropy)
        self.x0 = np.zeros(problem.sys.n) if x0 is None else np.asarray(x0, dtype=float)
        self._counter = 0

    # -- noise pre-generation -------------------------------------------------
    def _noise_block(self, ticket: int) -> np.ndarray:
        """(n_rollouts, T, n) noise array for one evaluation ticket."""
        model = self.problem.noise
        T, n = self.horizon, self.problem.sys.n
        out = np.empty((self.n_rollouts, T, n))
        for r in range(self.n_rollouts):
            if model.kind in ("gaussian", "uniform"):
                rng = np.random.default_rng(
                    np.random.SeedSequence(self.entropy, spawn_key=(ticket, r))
                )
                if model.kind == "gaussian":
                    z = rng.standard_normal((T, model.factor.shape[1]))
                    out[r] = model.wbar + z @ model.factor.T
                else:
                    out[r] = model.wbar + rng.uniform(-1.0, 1.0, (T, n)) * model.half_widths
            elif model.kind == "zero":
                out[r] = 0.0
            elif model.kind == "step_load":
                w = np.zeros((T, n))
                for start, vec in model.schedule:
                    if start < T:
                        w[max(start, 0):] += vec
                out[r] = w
            else:
                raise ValueError(f"unknown noise kind {model.kind!r}")
        return out

    # -- batched rollout core --------------------------------------------------
    def costs_many(self, Ks: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
        """Monte-Carlo (base value, constraint values) for a batch of gains."""
        p = self.problem
        specs = [p.cost] + [c.cost for c in p.constraints]
        S = len(Ks)
        R = self.n_rollouts
        T, n = self.horizon, p.sys.n
        tickets = [self._counter + s for s in range(S)]
        self._counter += S

        Kmat = np.array([p.gain_values(K) for K in Ks])  # (S, m, n)
        F = p.sys.A[None] - np.einsum("ij,sjk->sik", p.sys.B, Kmat)  # (S, n, n)
        F = np.repeat(F, R, axis=0)  # (S*R, n, n)
        # per-spec effective quadratic x'(Q + K'RK)x, since u = -Kx exactly
        Qeff = []
        for spec in specs:
            Qs = spec.Q[None] + np.einsum("sji,jk,skl->sil", Kmat, spec.R, Kmat)
            Qeff.append(np.repeat(Qs, R, axis=0))
        lin = [spec.q for spec in specs]
        has_lin = [bool(np.any(spec.q)) for spec in specs]

        noise = np.empty((S * R, T, n))
        for s, ticket in enumerate(tickets):
            noise[s * R:(s + 1) * R] = self._noise_block(ticket)

        X = np.tile(self.x0, (S * R, 1))
        acc = np.zeros((len(specs), S * R))
        alive = np.ones(S * R, dtype=bool)
        cap_sq = DIVERGENCE_CAP**2
        burn = self.burn_in
        with np.errstate(over="ignore", invalid="ignore"):
            for t in range(T):
                sq = np.einsum("bi,bi->b", X, X)
                dead = ~np.isfinite(sq) | (sq > cap_sq)
                if dead.any():
                    alive &= ~dead
                    X[dead] = 0.0
                    if not alive.any():
                        break
                if t >= burn:
                    for i in range(len(specs)):
                        acc[i] += np.einsum("bi,bij,bj->b", X, Qeff[i], X)
                        if has_lin[i]:
                            acc[i] += X @ lin[i]
                X = np.einsum("bij,bj->bi", F, X) + noise[:, t]

        acc /= T - burn
        acc[:, ~alive] = np.inf
        per_gain = acc.reshape(len(specs), S, R).mean(axis=2)
        offsets = np.array([spec.offset for spec in specs])
        per_gain += offsets[:, None]
        per_gain[:, ~np.isfinite(per_gain).all(axis=0)] = np.inf
        return per_gain[0], per_gain[1:].T  # (S,), (S, k)

    def costs(self, K) -> Tuple[float, np.ndarray]:
        base, cons = self.costs_many([K])
        return float(base[0]), cons[0]

    def oracle_multipliers(self, cons: np.ndarray) -> np.ndarray:
        bounds = np.array([c.bound for c in self.problem.constraints])
        return np.where(cons > bounds, self.cap, 0.0)

    def phi_parts(self, K) -> Tuple[float, float, np.ndarray]:
        base, cons = self.costs(K)
        if not np.isfinite(base):
            return np.inf, base, cons
        bounds = np.array([c.bound for c in self.problem.constraints])
        viol = np.clip(cons - bounds, 0.0, None)
        return base + self.cap * float(viol.sum()), base, cons

    def phi(self, K) -> float:
        return self.phi_parts(K)[0]

    def phi_many(self, Ks: Sequence[np.ndarray]) -> np.ndarray:
        base, cons = self.costs_many(Ks)
        if len(self.problem.constraints) == 0:
            return base
        bounds = np.array([c.bound for c in self.problem.constraints])
        viol = np.clip(cons - bounds[None, :], 0.0, None)
        out = base + self.cap * viol.sum(axis=1)
        out[~np.isfinite(base)] = np.inf
        return out
