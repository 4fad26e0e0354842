"""Minimax policy optimizers and their diagnostics.

``gdmax`` is plain gradient descent on the inner-maximized Lagrangian with the
exact bang-bang multiplier oracle; ``sgdmax`` replaces the gradient with an
averaged zero-order estimate and runs a fixed number of iterations. Both
reject destabilizing steps by per-step backtracking. The Moreau-envelope and
local-constant helpers are diagnostics used by tests and by the step-size
rules; they never sit on the optimization path.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import BatchFailure, StabilityError, StepRejected
from .gains import SparsityPattern, StructuredGain, project_structure, sample_unit_perturbation
from .gradients import exact_policy_gradient, zopg_batch
from .objective import (
    ExactEvaluator,
    McEvaluator,
    MultiplierBox,
    Problem,
    constraint_values,
)

_MODES = ("model-based", "model-free")


@dataclass(frozen=True)
class OptimizerConfig:
    """Step sizes, sampling sizes and caps for the optimizers.

    ``eta`` is the step size, ``eps`` the stationarity threshold (gdmax stop),
    ``cap`` the multiplier box bound, ``radius`` the zero-order smoothing
    radius, ``samples`` the zero-order batch size, ``iterations`` the outer
    iteration budget and ``alpha`` the probability/step-size constant of the
    stochastic parameter rule. Model-free runs additionally need the
    Monte-Carlo evaluation sizes; ``mc_burn_in`` defaults to a tenth of the
    horizon.
    """

    eta: float
    eps: float
    cap: float
    radius: float = 0.1
    samples: int = 1
    iterations: int = 100
    alpha: float = 40.0
    mode: str = "model-based"
    mc_horizon: int = 0
    mc_rollouts: int = 1
    mc_burn_in: Optional[int] = None
    max_halvings: int = 30

    def __post_init__(self):
        if self.eta <= 0 or self.eps <= 0 or self.cap <= 0 or self.radius <= 0:
            raise ValueError("eta, eps, cap and radius must be positive")
        if self.samples < 1 or self.iterations < 0 or self.alpha <= 0:
            raise ValueError("samples must be >= 1, iterations >= 0, alpha > 0")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}")
        if self.mode == "model-free":
            if self.mc_horizon < 2 or self.mc_rollouts < 1:
                raise ValueError("model-free mode needs mc_horizon >= 2 and mc_rollouts >= 1")

    def burn_in(self) -> int:
        return self.mc_horizon // 10 if self.mc_burn_in is None else self.mc_burn_in


@dataclass
class RunRecord:
    """Per-iteration history of an optimizer run plus the final state."""

    iteration: np.ndarray
    cost: np.ndarray          # exact base objective at each iterate
    phi: np.ndarray           # exact inner-maximized value at each iterate
    grad_norm: np.ndarray     # exact gradient norm (gdmax) or batch-estimate norm (sgdmax)
    multipliers: np.ndarray   # (rows, k) oracle multipliers
    spectral_radius: np.ndarray  # closed-loop radius on the physical subspace
    phi_eval: np.ndarray      # evaluator-mode phi (equals ``phi`` in model-based runs)
    wall_time: np.ndarray
    gains: List[StructuredGain]
    final_gain: StructuredGain
    converged: bool
    iterations_used: int
    mode: str
    best_gain: Optional[StructuredGain] = None
    best_phi: float = np.nan
    best_iteration: int = -1
    step_halvings: int = 0

    def rows(self) -> int:
        return int(self.iteration.size)

    def content_digest(self) -> str:
        """Digest of the deterministic payload (excludes wall times)."""
        h = hashlib.sha256()
        for arr in (
            self.iteration,
            self.cost,
            self.phi,
            self.grad_norm,
            self.multipliers,
            self.spectral_radius,
            self.phi_eval,
            self.final_gain.values,
        ):
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        h.update(str(self.converged).encode())
        h.update(str(self.iterations_used).encode())
        return h.hexdigest()


class _Recorder:
    def __init__(self, n_constraints: int):
        self.rows: List[tuple] = []
        self.gains: List[StructuredGain] = []
        self.k = n_constraints
        self.t0 = time.perf_counter()

    def add(self, j, K, cost, phi_exact, grad_norm, lam, radius, phi_eval):
        self.rows.append(
            (j, cost, phi_exact, grad_norm, np.asarray(lam, dtype=float), radius, phi_eval,
             time.perf_counter() - self.t0)
        )
        self.gains.append(K)

    def build(self, final_gain, converged, iterations_used, mode, **extra) -> RunRecord:
        rows = self.rows
        return RunRecord(
            iteration=np.array([r[0] for r in rows], dtype=int),
            cost=np.array([r[1] for r in rows]),
            phi=np.array([r[2] for r in rows]),
            grad_norm=np.array([r[3] for r in rows]),
            multipliers=(
                np.array([r[4] for r in rows]).reshape(len(rows), self.k)
                if rows
                else np.zeros((0, self.k))
            ),
            spectral_radius=np.array([r[5] for r in rows]),
            phi_eval=np.array([r[6] for r in rows]),
            wall_time=np.array([r[7] for r in rows]),
            gains=self.gains,
            final_gain=final_gain,
            converged=converged,
            iterations_used=iterations_used,
            mode=mode,
            **extra,
        )


def _accept_step(problem, evaluator, K, direction, eta, max_halvings):
    """Backtracking step: halve eta until the candidate evaluates finite.

    The acceptance decision uses only the evaluator (so model-free runs stay
    model-free); spectral radii are computed purely for the rejection
    diagnostics. Returns (new gain, halvings used); raises StepRejected when
    the halving budget is exhausted.
    """
    eta_try = eta
    best_rho = np.inf
    for h in range(max_halvings + 1):
        cand = project_structure(K.values - eta_try * direction, K.pattern)
        if np.isfinite(evaluator.phi(cand.values)):
            return cand, h
        best_rho = min(best_rho, problem.closed_loop_radius(cand))
        eta_try *= 0.5
    raise StepRejected(-1, float(np.linalg.norm(direction)), eta_try, best_rho)


def gdmax(problem: Problem, K0: StructuredGain, cfg: OptimizerConfig) -> RunRecord:
    """Gradient descent with the exact max-oracle (model-based).

    Iterates until the Lagrangian gradient norm drops to ``cfg.eps`` or the
    iteration budget is spent; every accepted iterate is stabilizing.
    """
    evaluator = ExactEvaluator(problem, cfg.cap)
    phi0, base0, cons0 = evaluator.phi_parts(K0.values)
    if not np.isfinite(phi0):
        raise StabilityError(problem.closed_loop_radius(K0), "initial gain is not stabilizing")

    rec = _Recorder(len(problem.constraints))
    K = K0
    converged = False
    halvings_total = 0
    j = 0
    while True:
        phi_j, base_j, cons_j = evaluator.phi_parts(K.values)
        lam = MultiplierBox(cfg.cap, evaluator.oracle_multipliers(cons_j))
        grad = exact_policy_gradient(
            problem.sys, problem.noise, K, problem.cost, problem.constraints, lam,
            basis=problem.basis,
        )
        gn = grad.norm()
        rec.add(j, K, base_j, phi_j, gn, lam.values, problem.closed_loop_radius(K), phi_j)
        if j >= cfg.iterations:
            break
        if gn <= cfg.eps:
            converged = True
            break
        try:
            K, used = _accept_step(problem, evaluator, K, grad.values, cfg.eta, cfg.max_halvings)
        except StepRejected as exc:
            raise StepRejected(j, gn, exc.eta, exc.best_radius) from None
        halvings_total += used
        j += 1
    return rec.build(K, converged, j, "model-based", step_halvings=halvings_total)


def sgdmax(problem: Problem, K0: StructuredGain, cfg: OptimizerConfig, seed=0) -> RunRecord:
    """Stochastic gradient descent with max-oracle via zero-order gradients.

    Runs exactly ``cfg.iterations`` iterations (no gradient-norm stop) and
    additionally tracks the best-evaluated iterate, since stochastic last
    iterates can regress. In model-free mode only rollout access is used for
    all optimizer decisions; exact values are recorded purely as diagnostics.
    """
    perturb_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    if cfg.mode == "model-free":
        evaluator = McEvaluator(
            problem, cfg.cap, cfg.mc_horizon, cfg.mc_rollouts, cfg.burn_in(), entropy=seed
        )
    else:
        evaluator = ExactEvaluator(problem, cfg.cap)
    exact = ExactEvaluator(problem, cfg.cap)

    phi_hat0 = evaluator.phi(K0.values)
    if not np.isfinite(phi_hat0):
        raise StabilityError(problem.closed_loop_radius(K0), "initial gain failed evaluation")

    rec = _Recorder(len(problem.constraints))
    K = K0
    best = (np.inf, K0, -1)
    halvings_total = 0
    prev: Optional[Tuple[StructuredGain, np.ndarray, float]] = None  # (gain, direction, eta used)

    j = 0
    while j < cfg.iterations:
        try:
            batch = zopg_batch(K, cfg.radius, problem.pattern, evaluator, cfg.samples, perturb_rng)
        except BatchFailure:
            # the current iterate is too close to the stability edge for this
            # radius: undo the step that produced it with a halved step size
            if prev is None:
                raise StepRejected(j, np.nan, cfg.eta, problem.closed_loop_radius(K)) from None
            base_K, direction, eta_used = prev
            if halvings_total >= cfg.max_halvings:
                raise StepRejected(
                    j, float(np.linalg.norm(direction)), eta_used, problem.closed_loop_radius(K)
                ) from None
            eta_used *= 0.5
            halvings_total += 1
            K = project_structure(base_K.values - eta_used * direction, problem.pattern)
            prev = (base_K, direction, eta_used)
            continue

        phi_hat, base_hat, cons_hat = evaluator.phi_parts(K.values)
        lam_hat = evaluator.oracle_multipliers(cons_hat)
        phi_ex, base_ex, _ = exact.phi_parts(K.values)
        rec.add(
            j, K, base_ex, phi_ex, batch.norm(), lam_hat, problem.closed_loop_radius(K), phi_hat
        )
        if np.isfinite(phi_hat) and phi_hat < best[0]:
            best = (phi_hat, K, j)

        try:
            nxt, used = _accept_step(
                problem, evaluator, K, batch.gain.values, cfg.eta, cfg.max_halvings
            )
        except StepRejected as exc:
            raise StepRejected(j, batch.norm(), exc.eta, exc.best_radius) from None
        halvings_total += used
        prev = (K, batch.gain.values, cfg.eta * 0.5**used)
        K = nxt
        j += 1

    # final diagnostics row (no fresh gradient estimate at the final iterate)
    phi_hat, base_hat, cons_hat = evaluator.phi_parts(K.values)
    lam_hat = evaluator.oracle_multipliers(cons_hat)
    phi_ex, base_ex, _ = exact.phi_parts(K.values)
    rec.add(j, K, base_ex, phi_ex, np.nan, lam_hat, problem.closed_loop_radius(K), phi_hat)
    if np.isfinite(phi_hat) and phi_hat < best[0]:
        best = (phi_hat, K, j)

    return rec.build(
        K,
        False,
        j,
        cfg.mode,
        best_gain=best[1],
        best_phi=best[0],
        best_iteration=best[2],
        step_halvings=halvings_total,
    )


# ---------------------------------------------------------------------------
# stationarity, Moreau envelope, local constants


@dataclass(frozen=True)
class StationarityReport:
    is_sp: bool
    grad_norm: float
    dual_residual: float
    dual_tolerance: float


def check_stationarity(
    problem: Problem,
    K: StructuredGain,
    lam: MultiplierBox,
    eps: float,
    lsmooth: float,
) -> StationarityReport:
    """Primal/dual residual pair at (K, lam).

    The primal residual is the Lagrangian gradient norm; the dual residual is
    the distance moved by a projected multiplier ascent step of size
    1/lsmooth, where the multiplier gradient is the constraint residual
    vector. Both must pass (eps and eps/lsmooth) for an approximate
    stationary pair.
    """
    grad = exact_policy_gradient(
        problem.sys, problem.noise, K, problem.cost, problem.constraints, lam,
        basis=problem.basis,
    )
    gn = grad.norm()
    if problem.constraints:
        values = constraint_values(
            problem.sys, problem.noise, K, problem.constraints, problem.basis
        )
        resid = values - np.array([c.bound for c in problem.constraints])
        stepped = np.clip(lam.values + resid / lsmooth, 0.0, lam.cap)
        dual = float(np.linalg.norm(stepped - lam.values))
    else:
        dual = 0.0
    tol = eps / lsmooth
    return StationarityReport(gn <= eps and dual <= tol, gn, dual, tol)


@dataclass(frozen=True)
class PhiOracle:
    """Callable pair (value, subgradient) for the inner-maximized objective.

    ``grad`` must return a dense array of the gain's shape; only the
    pattern's entries are used. Test hooks can supply synthetic functions.
    """

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    pattern: SparsityPattern


def problem_phi_oracle(problem: Problem, cap: float) -> PhiOracle:
    """The exact Phi oracle of a problem bundle; subgradient via the max-oracle."""
    evaluator = ExactEvaluator(problem, cap)

    def value(Kv: np.ndarray) -> float:
        return evaluator.phi(Kv)

    def grad(Kv: np.ndarray) -> np.ndarray:
        _, cons = evaluator.costs(Kv)
        lam = MultiplierBox(cap, evaluator.oracle_multipliers(cons))
        K = project_structure(Kv, problem.pattern)
        return exact_policy_gradient(
            problem.sys, problem.noise, K, problem.cost, problem.constraints, lam,
            basis=problem.basis,
        ).values

    return PhiOracle(value, grad, problem.pattern)


@dataclass(frozen=True)
class MoreauResult:
    value: float
    prox_point: StructuredGain
    improved: bool
    inner_iterations: int


def moreau_envelope(
    oracle: PhiOracle,
    K: StructuredGain,
    mu: float,
    steps: int = 200,
    step_size: Optional[float] = None,
    lsmooth: Optional[float] = None,
) -> MoreauResult:
    """Approximate Moreau envelope value min Phi(K') + |K'-K|^2/(2 mu).

    Runs masked subgradient descent on the regularized objective from K and
    returns the best value seen, which is an upper bound on the true
    envelope and never exceeds Phi(K). The default step is 1/(2 lsmooth),
    clipped to mu to keep the proximal quadratic stable.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    if step_size is None:
        if lsmooth is None or lsmooth <= 0:
            raise ValueError("need step_size or a positive lsmooth")
        step_size = min(1.0 / (2.0 * lsmooth), mu)

    phi0 = float(oracle.value(K.values))
    if not np.isfinite(phi0):
        raise StabilityError(np.nan, "Moreau envelope requested at a non-evaluable gain")
    best_val = phi0
    best_point = K
    Kp = K
    scale = 1.0
    used = 0
    for s in range(steps):
        used = s + 1
        g = oracle.grad(Kp.values) + (Kp.values - K.values) / mu
        cand = project_structure(Kp.values - scale * step_size * g, K.pattern)
        val = float(oracle.value(cand.values))
        if not np.isfinite(val):
            scale *= 0.5
            if scale < 2.0**-20:
                break
            continue
        Kp = cand
        obj = val + float(np.linalg.norm(cand.values - K.values)) ** 2 / (2.0 * mu)
        if obj < best_val:
            best_val = obj
            best_point = cand
    return MoreauResult(best_val, best_point, best_val < phi0, used)


@dataclass(frozen=True)
class LocalConstants:
    """Empirical curvature probes around a gain.

    ``lipschitz`` and ``smoothness`` are max finite-difference ratios of the
    objective and its gradient over random unit directions; ``safe_radius``
    is the largest probed radius at which every perturbation stayed
    evaluable; ``mu0`` is the envelope parameter 1/(2 smoothness).
    """

    lipschitz: float
    smoothness: float
    safe_radius: float
    mu0: float


def estimate_local_constants(
    oracle: PhiOracle,
    K: StructuredGain,
    probe_radius: float,
    n_probes: int,
    rng: np.random.Generator,
) -> LocalConstants:
    """Probe Lipschitz/smoothness constants and a safe perturbation radius.

    The radius search bisects (on a log scale) over one decade below the
    probe radius when some probes fail there.
    """
    if probe_radius <= 0 or n_probes < 1:
        raise ValueError("need positive probe radius and at least one probe")
    dirs = [sample_unit_perturbation(oracle.pattern, rng) for _ in range(n_probes)]
    phi0 = float(oracle.value(K.values))
    g0 = np.asarray(oracle.grad(K.values), dtype=float)

    def all_finite(radius: float) -> bool:
        return all(
            np.isfinite(oracle.value(K.values + radius * U.values)) for U in dirs
        )

    lip = 0.0
    smooth = 0.0
    for U in dirs:
        Kp = K.values + probe_radius * U.values
        val = float(oracle.value(Kp))
        if not np.isfinite(val):
            continue
        lip = max(lip, abs(val - phi0) / probe_radius)
        gp = np.asarray(oracle.grad(Kp), dtype=float)
        smooth = max(smooth, float(np.linalg.norm(gp - g0)) / probe_radius)

    if all_finite(probe_radius):
        safe = probe_radius
    else:
        lo, hi = probe_radius / 10.0, probe_radius
        if all_finite(lo):
            for _ in range(12):
                mid = float(np.sqrt(lo * hi))
                if all_finite(mid):
                    lo = mid
                else:
                    hi = mid
            safe = lo
        else:
            # even the bottom of the decade destabilizes; report it as the cap
            safe = lo
    smooth_floor = max(smooth, 1e-12)
    return LocalConstants(lip, smooth, safe, 1.0 / (2.0 * smooth_floor))


def gdmax_step_rule(constants: LocalConstants, eps: float) -> float:
    """Deterministic step-size rule from probed constants."""
    lip = max(constants.lipschitz, 1e-12)
    smooth = max(constants.smoothness, 1e-12)
    return float(min(eps**2 / (4.0 * smooth * lip**2), constants.safe_radius))


def sgdmax_parameter_rule(
    constants: LocalConstants,
    eps: float,
    samples: int,
    alpha: float,
    phi_mu0_at_start: float,
) -> Tuple[float, float, int]:
    """Stochastic parameter rule: (radius, eta, iterations).

    Needs the envelope value at the initial gain, which the caller obtains
    from ``moreau_envelope`` (the rule is circular otherwise).
    """
    lip = max(constants.lipschitz, 1e-12)
    smooth = max(constants.smoothness, 1e-12)
    radius = float(min(constants.safe_radius, lip * np.sqrt(samples) / smooth))
    eta = float(eps**2 / (alpha * smooth * (lip**2 + smooth**2 * radius**2 / samples)))
    iters = int(np.ceil(2.0 * np.sqrt(10.0 * alpha) * phi_mu0_at_start / (eta * eps**2)))
    return radius, eta, iters
