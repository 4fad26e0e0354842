"""Policy gradients over the structured entries: exact and zero-order.

The exact route differentiates the stationary-moment cost analytically for
the centered quadratic part and by central differences for the mean-path
part (nonzero noise mean or linear stage cost). The zero-order route is the
one-point smoothed estimator built from unit-sphere perturbations of the
pattern's nonzeros.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import BatchFailure, StabilityError
from .gains import SparsityPattern, StructuredGain, project_structure, sample_unit_perturbation
from .numlin import solve_dlyap, spectral_radius
from .objective import CostSpec, ConstraintSpec, MultiplierBox, combine_specs
from .system import LtiSystem, NoiseModel

_FD_STEP = 1e-6
_STABILITY_TOL = 1.0 - 1e-8


@dataclass(frozen=True)
class GradientEstimate:
    """A gain-shaped gradient plus sampling metadata."""

    gain: StructuredGain
    n_samples: int = 1
    n_failed: int = 0
    smoothing_radius: float = 0.0

    def norm(self) -> float:
        return self.gain.norm()


def _mean_path_value(
    sys: LtiSystem,
    spec: CostSpec,
    Kv: np.ndarray,
    wbar: np.ndarray,
    basis: Optional[np.ndarray],
) -> float:
    """Stationary mean contribution xbar'(Q + K'RK)xbar + q'xbar."""
    F = sys.A - sys.B @ Kv
    if basis is not None:
        F = basis.T @ F @ basis
        wb = basis.T @ wbar
        q = basis.T @ spec.q
    else:
        wb = wbar
        q = spec.q
    if spectral_radius(F) >= _STABILITY_TOL:
        return np.inf
    xbar = np.linalg.solve(np.eye(F.shape[0]) - F, wb)
    if basis is not None:
        Kr = Kv @ basis
        Qeff = basis.T @ spec.Q @ basis + Kr.T @ spec.R @ Kr
    else:
        Qeff = spec.Q + Kv.T @ spec.R @ Kv
    return float(xbar @ Qeff @ xbar + q @ xbar)


def exact_policy_gradient(
    sys: LtiSystem,
    noise: NoiseModel,
    K: StructuredGain,
    base: CostSpec,
    constraints: Sequence[ConstraintSpec] = (),
    lam: Optional[MultiplierBox] = None,
    basis: Optional[np.ndarray] = None,
) -> StructuredGain:
    """Gradient of the exact Lagrangian over the nonzero entries of K.

    The centered quadratic part has the closed form 2(R K - B'P F) Sigma in
    the (possibly reduced) coordinates; the mean-path part, present only for
    nonzero noise mean or linear stage cost, is added by central differences
    on the pattern's entries.
    """
    if lam is None or len(constraints) == 0:
        spec = base if not constraints else combine_specs(base, constraints, np.zeros(len(constraints)))[0]
    else:
        spec, _ = combine_specs(base, constraints, lam.values)

    Kv = K.values
    F = sys.A - sys.B @ Kv
    if basis is not None:
        Fr = basis.T @ F @ basis
        Br = basis.T @ sys.B
        Kr = Kv @ basis
        Qr = basis.T @ spec.Q @ basis
        Wr = basis.T @ noise.W @ basis
    else:
        Fr, Br, Kr, Qr, Wr = F, sys.B, Kv, spec.Q, noise.W
    rho = spectral_radius(Fr)
    if rho >= _STABILITY_TOL:
        raise StabilityError(rho)

    Qeff = Qr + Kr.T @ spec.R @ Kr
    P = solve_dlyap(Fr, 0.5 * (Qeff + Qeff.T), transpose=True)
    Sigma = solve_dlyap(Fr, 0.5 * (Wr + Wr.T))
    grad_r = 2.0 * (spec.R @ Kr - Br.T @ P @ Fr) @ Sigma
    grad = grad_r @ basis.T if basis is not None else grad_r

    if np.any(noise.wbar) or np.any(spec.q):
        mask_idx = np.argwhere(K.pattern.mask)
        fd = np.zeros_like(Kv)
        for i, j in mask_idx:
            Kp = Kv.copy()
            Kp[i, j] += _FD_STEP
            up = _mean_path_value(sys, spec, Kp, noise.wbar, basis)
            Kp[i, j] -= 2.0 * _FD_STEP
            dn = _mean_path_value(sys, spec, Kp, noise.wbar, basis)
            fd[i, j] = (up - dn) / (2.0 * _FD_STEP)
        grad = grad + fd

    return project_structure(grad, K.pattern)


def zopg(
    K: StructuredGain,
    radius: float,
    pattern: SparsityPattern,
    evaluator,
    rng: np.random.Generator,
) -> GradientEstimate:
    """One-sample zero-order policy gradient.

    Draws a unit perturbation U on the pattern, evaluates the inner-maximized
    Lagrangian at K + radius*U through the evaluator, and scales by
    nnz/radius. A non-finite evaluation marks the sample failed.
    """
    if radius <= 0:
        raise ValueError("smoothing radius must be positive")
    U = sample_unit_perturbation(pattern, rng)
    value = float(evaluator.phi(K.values + radius * U.values))
    if not np.isfinite(value):
        return GradientEstimate(
            StructuredGain.zeros(pattern), n_samples=1, n_failed=1, smoothing_radius=radius
        )
    scale = pattern.nnz / radius * value
    return GradientEstimate(
        project_structure(scale * U.values, pattern), n_samples=1, smoothing_radius=radius
    )


def zopg_batch(
    K: StructuredGain,
    radius: float,
    pattern: SparsityPattern,
    evaluator,
    n_samples: int,
    rng: np.random.Generator,
) -> GradientEstimate:
    """Mean of n_samples one-sample estimates.

    Failed samples (destabilized perturbations) are dropped and the mean is
    renormalized over the survivors; their count is reported. Raises
    BatchFailure when every sample fails.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if radius <= 0:
        raise ValueError("smoothing radius must be positive")
    perturbations = [sample_unit_perturbation(pattern, rng) for _ in range(n_samples)]
    candidates = [K.values + radius * U.values for U in perturbations]
    if hasattr(evaluator, "phi_many"):
        values = np.asarray(evaluator.phi_many(candidates), dtype=float)
    else:
        values = np.array([evaluator.phi(c) for c in candidates], dtype=float)
    ok = np.isfinite(values)
    n_failed = int((~ok).sum())
    if n_failed == n_samples:
        raise BatchFailure(n_samples, radius)
    acc = np.zeros(pattern.shape)
    for value, U, good in zip(values, perturbations, ok):
        if good:
            acc += value * U.values
    acc *= pattern.nnz / radius / (n_samples - n_failed)
    return GradientEstimate(
        project_structure(acc, pattern),
        n_samples=n_samples,
        n_failed=n_failed,
        smoothing_radius=radius,
    )
