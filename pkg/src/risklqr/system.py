"""Discrete-time LTI dynamics, noise models and their moments, rollouts, discretization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .errors import DivergenceError
from .numlin import require_psd, require_square, symmetrize

DIVERGENCE_CAP = 1e12


@dataclass(frozen=True)
class LtiSystem:
    """Discrete-time state-space pair x+ = A x + B u + w."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = require_square(self.A, "A")
        B = np.asarray(self.B, dtype=float)
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise ValueError(f"B shape {B.shape} inconsistent with A shape {A.shape}")
        if not np.all(np.isfinite(B)):
            raise ValueError("B has non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class NoiseStats:
    """Per-step noise moments, weighted by a declared matrix Q.

    ``m4`` is the variance of the centered weighted quadratic form
    (w - wbar)' Q (w - wbar), i.e. E[(...) - tr(WQ)]^2.
    """

    wbar: np.ndarray
    W: np.ndarray
    M3: np.ndarray
    m4: float


@dataclass(frozen=True)
class NoiseModel:
    """One of the supported disturbance models plus its weighted moments.

    Kinds:
        zero          no disturbance
        gaussian      mean + factor @ N(0, I) draws, covariance factor factor'
        uniform       independent per-coordinate uniform on [mean - h, mean + h]
        step_load     deterministic time-indexed schedule of persistent steps

    Statistics are derived analytically where available and are relative to
    ``qweight``. Step-load models are deterministic signals and carry zero
    stationary moments.
    """

    kind: str
    dim: int
    qweight: np.ndarray
    wbar: np.ndarray
    W: np.ndarray
    M3: np.ndarray
    m4: float
    factor: Optional[np.ndarray] = None            # gaussian: w = wbar + factor @ z
    half_widths: Optional[np.ndarray] = None       # uniform
    schedule: Tuple[Tuple[int, np.ndarray], ...] = ()  # step_load: (start step, state vector)

    @property
    def stats(self) -> NoiseStats:
        return NoiseStats(self.wbar, self.W, self.M3, self.m4)

    @staticmethod
    def zero(dim: int, qweight: Optional[np.ndarray] = None) -> "NoiseModel":
        q = _default_qweight(dim, qweight)
        z = np.zeros(dim)
        return NoiseModel("zero", dim, q, z, np.zeros((dim, dim)), z.copy(), 0.0)

    @staticmethod
    def gaussian(
        mean: np.ndarray,
        cov: Optional[np.ndarray] = None,
        qweight: Optional[np.ndarray] = None,
        factor: Optional[np.ndarray] = None,
    ) -> "NoiseModel":
        """Gaussian noise given either a covariance or a sampling factor L (cov = L L')."""
        mean = np.asarray(mean, dtype=float).reshape(-1)
        dim = mean.size
        if factor is not None:
            factor = np.asarray(factor, dtype=float)
            if factor.ndim != 2 or factor.shape[0] != dim:
                raise ValueError(f"factor shape {factor.shape} inconsistent with dim {dim}")
            W = symmetrize(factor @ factor.T)
        else:
            if cov is None:
                raise ValueError("gaussian noise needs cov or factor")
            W = require_psd(np.asarray(cov, dtype=float), "cov")
            factor = _psd_factor(W)
        q = _default_qweight(dim, qweight)
        m4 = 2.0 * float(np.trace((W @ q) @ (W @ q)))
        return NoiseModel("gaussian", dim, q, mean, W, np.zeros(dim), m4, factor=factor)

    @staticmethod
    def bounded_uniform(
        half_widths: np.ndarray,
        mean: Optional[np.ndarray] = None,
        qweight: Optional[np.ndarray] = None,
    ) -> "NoiseModel":
        h = np.asarray(half_widths, dtype=float).reshape(-1)
        if np.any(h < 0):
            raise ValueError("half widths must be nonnegative")
        dim = h.size
        mean = np.zeros(dim) if mean is None else np.asarray(mean, dtype=float).reshape(-1)
        q = _default_qweight(dim, qweight)
        W = np.diag(h**2 / 3.0)
        # Var of the weighted quadratic form for independent symmetric coordinates:
        # sum_i Q_ii^2 (E d_i^4 - W_ii^2) + 2 sum_{i != j} Q_ij^2 W_ii W_jj
        fourth = h**4 / 5.0
        varq = float(np.sum(np.diag(q) ** 2 * (fourth - np.diag(W) ** 2)))
        off = q**2 * np.outer(np.diag(W), np.diag(W))
        varq += 2.0 * float(np.sum(off) - np.sum(np.diag(off)))
        return NoiseModel("uniform", dim, q, mean, W, np.zeros(dim), varq, half_widths=h)

    @staticmethod
    def step_load(
        dim: int,
        schedule: Sequence[Tuple[int, np.ndarray]],
        qweight: Optional[np.ndarray] = None,
    ) -> "NoiseModel":
        """Deterministic persistent step disturbances: w(t) = sum of vectors with start <= t."""
        q = _default_qweight(dim, qweight)
        sched = []
        for start, vec in schedule:
            vec = np.asarray(vec, dtype=float).reshape(-1)
            if vec.size != dim:
                raise ValueError(f"schedule vector has size {vec.size}, expected {dim}")
            sched.append((int(start), vec))
        sched.sort(key=lambda item: item[0])
        z = np.zeros(dim)
        return NoiseModel(
            "step_load", dim, q, z, np.zeros((dim, dim)), z.copy(), 0.0, schedule=tuple(sched)
        )

    def with_qweight(self, qweight: np.ndarray) -> "NoiseModel":
        """Re-derive the weighted moments relative to a different Q."""
        if self.kind == "gaussian":
            return NoiseModel.gaussian(self.wbar, qweight=qweight, factor=self.factor)
        if self.kind == "uniform":
            return NoiseModel.bounded_uniform(self.half_widths, self.wbar, qweight=qweight)
        if self.kind == "zero":
            return NoiseModel.zero(self.dim, qweight=qweight)
        if self.kind == "step_load":
            return NoiseModel.step_load(self.dim, self.schedule, qweight=qweight)
        raise ValueError(f"unknown noise kind {self.kind!r}")

    def sample(self, rng: np.random.Generator, t: Optional[int] = None) -> np.ndarray:
        return sample_noise(self, rng, t)


def _default_qweight(dim: int, qweight: Optional[np.ndarray]) -> np.ndarray:
    if qweight is None:
        return np.eye(dim)
    return require_psd(np.asarray(qweight, dtype=float), "qweight")


def _psd_factor(W: np.ndarray) -> np.ndarray:
    """Square-root factor of a psd matrix, tolerant of tiny negative eigenvalues."""
    vals, vecs = np.linalg.eigh(W)
    vals = np.clip(vals, 0.0, None)
    return vecs * np.sqrt(vals)


def step(sys: LtiSystem, x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """One dynamics update A x + B u + w."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    if x.size != sys.n or u.size != sys.m or w.size != sys.n:
        raise ValueError(
            f"dimension mismatch: x {x.size}, u {u.size}, w {w.size} "
            f"for system with n={sys.n}, m={sys.m}"
        )
    return sys.A @ x + sys.B @ u + w


def sample_noise(model: NoiseModel, rng: np.random.Generator, t: Optional[int] = None) -> np.ndarray:
    """Draw one disturbance vector; step-load models require a time index."""
    if model.kind == "zero":
        return np.zeros(model.dim)
    if model.kind == "gaussian":
        z = rng.standard_normal(model.factor.shape[1])
        return model.wbar + model.factor @ z
    if model.kind == "uniform":
        return model.wbar + model.half_widths * rng.uniform(-1.0, 1.0, size=model.dim)
    if model.kind == "step_load":
        if t is None:
            raise ValueError("step-load noise is time-indexed; pass t")
        w = np.zeros(model.dim)
        for start, vec in model.schedule:
            if t >= start:
                w += vec
        return w
    raise ValueError(f"unknown noise kind {model.kind!r}")


def estimate_noise_statistics(samples: Sequence[np.ndarray], qweight: np.ndarray) -> NoiseStats:
    """Plug-in empirical moments of noise samples, weighted by Q.

    The empirical mean and covariance are used inside the third and fourth
    weighted moments.
    """
    data = np.asarray(samples, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if data.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    q = require_psd(np.asarray(qweight, dtype=float), "qweight")
    wbar = data.mean(axis=0)
    delta = data - wbar
    W = symmetrize(delta.T @ delta / data.shape[0])
    quad = np.einsum("ti,ij,tj->t", delta, q, delta)
    M3 = delta.T @ quad / data.shape[0]
    m4 = float(np.mean((quad - np.trace(W @ q)) ** 2))
    return NoiseStats(wbar, W, M3, m4)


@dataclass(frozen=True)
class Trajectory:
    """Closed-loop sample path: states[t+1] = A states[t] + B actions[t] + noises[t]."""

    states: np.ndarray   # (T, n)
    actions: np.ndarray  # (T, m)
    noises: np.ndarray   # (T, n)

    @property
    def horizon(self) -> int:
        return self.states.shape[0]


def rollout(
    sys: LtiSystem,
    K,
    x0: np.ndarray,
    T: int,
    model: NoiseModel,
    rng: np.random.Generator,
) -> Trajectory:
    """Simulate T steps of u = -K x under the given noise model.

    Accepts a StructuredGain or a plain gain matrix. Raises DivergenceError
    as soon as the state norm exceeds the cap (destabilizing gain).
    """
    Kv = np.asarray(getattr(K, "values", K), dtype=float)
    if Kv.shape != (sys.m, sys.n):
        raise ValueError(f"gain shape {Kv.shape} inconsistent with system ({sys.m}, {sys.n})")
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.size != sys.n:
        raise ValueError(f"x0 has size {x.size}, expected {sys.n}")
    if T < 1:
        raise ValueError("horizon must be positive")

    states = np.empty((T, sys.n))
    actions = np.empty((T, sys.m))
    noises = np.empty((T, sys.n))
    for t in range(T):
        norm = float(np.linalg.norm(x))
        if not np.isfinite(norm) or norm > DIVERGENCE_CAP:
            raise DivergenceError(t, norm)
        u = -Kv @ x
        w = sample_noise(model, rng, t)
        states[t] = x
        actions[t] = u
        noises[t] = w
        x = sys.A @ x + sys.B @ u + w
    return Trajectory(states, actions, noises)


def discretize(
    Ac: np.ndarray,
    Bc_u: np.ndarray,
    Bc_w: Optional[np.ndarray],
    dt: float,
    method: str = "zoh",
) -> Tuple[LtiSystem, Optional[np.ndarray]]:
    """Continuous-to-discrete conversion.

    ``euler``: A = I + dt Ac, B = dt Bc.
    ``zoh``:   A = exp(dt Ac), B = (integral of exp(s Ac) ds over [0, dt]) Bc,
               computed with the augmented-matrix exponential.

    Returns the discrete system and the discretized noise input map (or None).
    """
    Ac = require_square(Ac, "Ac")
    Bc_u = np.asarray(Bc_u, dtype=float)
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = Ac.shape[0]
    if method == "euler":
        A = np.eye(n) + dt * Ac
        B = dt * Bc_u
        Bw = None if Bc_w is None else dt * np.asarray(Bc_w, dtype=float)
    elif method == "zoh":
        aug = np.zeros((2 * n, 2 * n))
        aug[:n, :n] = dt * Ac
        aug[:n, n:] = dt * np.eye(n)
        E = scipy.linalg.expm(aug)
        A = E[:n, :n]
        S = E[:n, n:]
        B = S @ Bc_u
        Bw = None if Bc_w is None else S @ np.asarray(Bc_w, dtype=float)
    else:
        raise ValueError(f"unknown discretization method {method!r}")
    return LtiSystem(A, B), Bw
