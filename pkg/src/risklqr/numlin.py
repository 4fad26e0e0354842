"""Dense numerical kernels: spectral radius, discrete Lyapunov and Riccati solvers.

These are the model-based oracles behind the exact cost/gradient paths. The
solvers are doubling iterations (quadratically convergent, dependency-free)
sized for the dense, small-to-moderate systems this package targets.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, StabilityError, StabilizabilityError

# Strict-stability margin required by the Lyapunov solver.
STABILITY_MARGIN = 1e-8

_SYM_TOL = 1e-10
_DLYAP_TOL = 1e-12
_DLYAP_MAX_ITER = 200
_DARE_TOL = 1e-11
_DARE_MAX_ITER = 120


def symmetrize(mat: np.ndarray) -> np.ndarray:
    """Average a matrix with its transpose to suppress asymmetry drift."""
    return 0.5 * (mat + mat.T)


def require_square(mat: np.ndarray, name: str = "matrix") -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square, got shape {mat.shape}")
    if mat.shape[0] == 0:
        raise ValueError(f"{name} must have positive dimension")
    if not np.all(np.isfinite(mat)):
        raise ValueError(f"{name} has non-finite entries")
    return mat


def require_symmetric(mat: np.ndarray, name: str = "matrix", tol: float = _SYM_TOL) -> np.ndarray:
    """Validate symmetry to a relative Frobenius tolerance and return the symmetrized matrix."""
    mat = require_square(mat, name)
    scale = np.linalg.norm(mat)
    if np.linalg.norm(mat - mat.T) > tol * max(scale, 1.0):
        raise ValueError(f"{name} is not symmetric within tolerance {tol:g}")
    return symmetrize(mat)


def require_psd(mat: np.ndarray, name: str = "matrix", tol: float = _SYM_TOL) -> np.ndarray:
    """Validate that a symmetric matrix is positive semi-definite (to tolerance)."""
    mat = require_symmetric(mat, name)
    eigmin = float(np.min(np.linalg.eigvalsh(mat)))
    if eigmin < -tol * max(np.linalg.norm(mat), 1.0):
        raise ValueError(f"{name} is not positive semi-definite (min eigenvalue {eigmin:.3e})")
    return mat


def spectral_radius(F: np.ndarray) -> float:
    """Largest absolute eigenvalue of a square matrix."""
    F = require_square(F, "F")
    try:
        eigs = np.linalg.eigvals(F)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"eigenvalue iteration failed for matrix with norm {np.linalg.norm(F):.3e}, "
            f"condition estimate {np.linalg.cond(F + np.eye(F.shape[0]) * 1e-300):.3e}"
        ) from exc
    return float(np.max(np.abs(eigs))) if eigs.size else 0.0


def solve_dlyap(F: np.ndarray, S: np.ndarray, transpose: bool = False) -> np.ndarray:
    """Solve the discrete Lyapunov equation by a doubling iteration.

    Returns X with X = F X F' + S (or X = F' X F + S when ``transpose``).
    Requires the spectral radius of F to be below 1 - 1e-8.
    """
    F = require_square(F, "F")
    S = require_symmetric(S, "S")
    if F.shape != S.shape:
        raise ValueError(f"shape mismatch: F {F.shape} vs S {S.shape}")
    rho = spectral_radius(F)
    if rho >= 1.0 - STABILITY_MARGIN:
        raise StabilityError(rho)

    M = F.T.copy() if transpose else F.copy()
    X = S.copy()
    for _ in range(_DLYAP_MAX_ITER):
        increment = M @ X @ M.T
        X = symmetrize(X + increment)
        # scale-free stop: the solution norm may be arbitrarily small
        if np.linalg.norm(increment) <= _DLYAP_TOL * max(np.linalg.norm(X), 1e-300):
            return X
        M = M @ M
    raise NumericalError(
        f"Lyapunov doubling did not converge within {_DLYAP_MAX_ITER} iterations "
        f"(spectral radius {rho:.12f})"
    )


def _riccati_residual(A, B, Q, R, P) -> float:
    BtPB = R + B.T @ P @ B
    res = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(BtPB, B.T @ P @ A) - P
    return float(np.linalg.norm(res) / max(np.linalg.norm(P), 1e-300))


def solve_dare(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray):
    """Solve the discrete algebraic Riccati equation.

    Uses the structure-preserving doubling iteration, which converges
    quadratically for stabilizable pairs and therefore also handles
    plants with very slow closed-loop modes.

    Returns:
        (P, K) where P is the stabilizing solution and K the optimal gain
        ``K = (R + B'PB)^-1 B'PA``; the closed loop A - BK is stable.

    Raises:
        StabilizabilityError: if the iteration diverges, stalls, or the
            resulting closed loop is not stable.
    """
    A = require_square(A, "A")
    Q = require_psd(Q, "Q")
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != A.shape[0]:
        raise ValueError(f"B shape {B.shape} inconsistent with A shape {A.shape}")
    R = require_symmetric(R, "R")
    if np.min(np.linalg.eigvalsh(R)) <= 0:
        raise ValueError("R must be positive definite")

    n = A.shape[0]
    eye = np.eye(n)
    Ak = A.copy()
    Gk = symmetrize(B @ np.linalg.solve(R, B.T))
    Hk = Q.copy()
    converged = False
    for _ in range(_DARE_MAX_ITER):
        try:
            W = eye + Gk @ Hk
            WinvA = np.linalg.solve(W, Ak)
            WinvG = np.linalg.solve(W, Gk)
        except np.linalg.LinAlgError as exc:
            raise StabilizabilityError(f"Riccati doubling became singular: {exc}") from exc
        Hn = symmetrize(Hk + Ak.T @ Hk @ WinvA)
        Gn = symmetrize(Gk + Ak @ WinvG @ Ak.T)
        An = Ak @ WinvA
        delta = np.max(np.abs(Hn - Hk))
        Ak, Gk, Hk = An, Gn, Hn
        if not np.isfinite(Hk).all() or np.max(np.abs(Hk)) > 1e300:
            raise StabilizabilityError(
                "Riccati iteration diverged; the pair (A, B) appears non-stabilizable"
            )
        if delta <= _DARE_TOL * max(np.max(np.abs(Hk)), 1e-300):
            converged = True
            break
    if not converged:
        raise StabilizabilityError(
            f"Riccati doubling did not converge within {_DARE_MAX_ITER} doublings"
        )

    P = symmetrize(Hk)
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    rho = spectral_radius(A - B @ K)
    if rho >= 1.0:
        raise StabilizabilityError(
            f"Riccati solution is not stabilizing (closed-loop spectral radius {rho:.6f})"
        )
    residual = _riccati_residual(A, B, Q, R, P)
    if residual > 1e-8:
        raise NumericalError(f"Riccati residual {residual:.3e} above tolerance")
    return P, K
