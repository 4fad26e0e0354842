"""Networked-microgrid load-frequency-control benchmark construction.

Each microgrid contributes four states (frequency deviation, generation
deviation, total tie-line inflow deviation, integrated area control error)
and one secondary-control input; tie-line coupling enters through the graph
Laplacian. The aggregated plant carries one exactly conserved quantity per
connected component (the sum of tie-flow states), which no input or load
disturbance can excite; the builder therefore attaches an orthonormal basis
of the physical subspace to the problem bundle so that exact evaluation and
stability checks remain well posed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import InitializationError, StabilizabilityError
from .gains import SparsityPattern, StructuredGain, pattern_from_graph, project_structure
from .numlin import solve_dare
from .objective import CostSpec, Problem, build_risk_constraint
from .system import LtiSystem, NoiseModel, discretize

STATES_PER_MG = 4
_STABLE = 1.0 - 1e-8


@dataclass(frozen=True)
class MgParams:
    """Per-microgrid model parameters (identical across the network).

    Defaults are the benchmark values: damping in MW/Hz, droop in Hz/MW,
    turbine gain MW/MW, turbine time constant s, area gain Hz/MW, area time
    constant s, tie-line coefficient MW/Hz.
    """

    damping: float = 16.66
    droop: float = 1.2e-3
    turbine_gain: float = 1.0
    turbine_time: float = 0.3
    area_gain: float = 0.06
    area_time: float = 24.0
    tie_coefficient: float = 1090.0

    def __post_init__(self):
        for name in (
            "damping", "droop", "turbine_gain", "turbine_time",
            "area_gain", "area_time", "tie_coefficient",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def bias(self) -> float:
        """Frequency bias factor: damping plus inverse droop."""
        return self.damping + 1.0 / self.droop


@dataclass(frozen=True)
class GridTopology:
    """Undirected microgrid interconnection; 0-indexed edge list."""

    n_mg: int
    edges: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        if self.n_mg < 1:
            raise ValueError("need at least one microgrid")
        seen = set()
        edges = []
        for a, b in self.edges:
            a, b = int(a), int(b)
            if not (0 <= a < self.n_mg and 0 <= b < self.n_mg) or a == b:
                raise ValueError(f"bad edge ({a}, {b}) for {self.n_mg} microgrids")
            key = (min(a, b), max(a, b))
            if key not in seen:
                seen.add(key)
                edges.append(key)
        object.__setattr__(self, "edges", tuple(sorted(edges)))

    @staticmethod
    def path(n_mg: int) -> "GridTopology":
        return GridTopology(n_mg, tuple((a, a + 1) for a in range(n_mg - 1)))

    @property
    def laplacian(self) -> np.ndarray:
        L = np.zeros((self.n_mg, self.n_mg))
        for a, b in self.edges:
            L[a, a] += 1.0
            L[b, b] += 1.0
            L[a, b] -= 1.0
            L[b, a] -= 1.0
        return L

    def components(self) -> Tuple[Tuple[int, ...], ...]:
        """Connected components, each a sorted tuple of microgrid indices."""
        adj = {a: set() for a in range(self.n_mg)}
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        seen = set()
        comps = []
        for start in range(self.n_mg):
            if start in seen:
                continue
            stack, comp = [start], []
            while stack:
                node = stack.pop()
                if node in seen:
                    continue
                seen.add(node)
                comp.append(node)
                stack.extend(adj[node] - seen)
            comps.append(tuple(sorted(comp)))
        return tuple(comps)


def build_blocks(p: MgParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Continuous-time per-microgrid blocks (A1, A2, Bu, Bw).

    State order: frequency deviation, generation deviation, tie inflow
    deviation, integrated area control error. A2 is the tie-coupling block
    applied through the Laplacian.
    """
    A1 = np.array([
        [-1.0 / p.area_time, p.area_gain / p.area_time, -p.area_gain / p.area_time, 0.0],
        [-p.turbine_gain / (p.droop * p.turbine_time), -1.0 / p.turbine_time, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
        [p.bias, 0.0, 1.0, 0.0],
    ])
    A2 = np.zeros((4, 4))
    A2[2, 0] = p.tie_coefficient
    Bu = np.array([[0.0], [p.turbine_gain / p.turbine_time], [0.0], [0.0]])
    Bw = np.array([[-p.area_gain / p.area_time], [0.0], [0.0], [0.0]])
    return A1, A2, Bu, Bw


def conserved_directions(topo: GridTopology) -> np.ndarray:
    """Orthonormal state directions conserved by the network dynamics.

    For each connected component the sum of its tie-flow states is constant
    regardless of inputs and loads (flows on every line cancel pairwise), so
    each component contributes one unit vector over its tie coordinates.
    Returns an (n, n_components) array.
    """
    n = STATES_PER_MG * topo.n_mg
    comps = topo.components()
    U = np.zeros((n, len(comps)))
    for i, comp in enumerate(comps):
        for a in comp:
            U[STATES_PER_MG * a + 2, i] = 1.0
        U[:, i] /= np.linalg.norm(U[:, i])
    return U


def physical_basis(topo: GridTopology) -> np.ndarray:
    """Orthonormal basis of the complement of the conserved directions."""
    n = STATES_PER_MG * topo.n_mg
    U = conserved_directions(topo)
    proj = np.eye(n) - U @ U.T
    left, svals, _ = np.linalg.svd(proj)
    keep = n - U.shape[1]
    return left[:, :keep]


def network_matrices(
    blocks: Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    topo: GridTopology,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Continuous aggregated matrices (Ac, Bc_u, Bc_w) via Kronecker products."""
    A1, A2, Bu, Bw = blocks
    eye = np.eye(topo.n_mg)
    Ac = np.kron(eye, A1) + np.kron(topo.laplacian, A2)
    return Ac, np.kron(eye, Bu), np.kron(eye, Bw)


def assemble_network(
    blocks: Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    topo: GridTopology,
    dt: float,
    method: str = "zoh",
) -> Tuple[LtiSystem, np.ndarray]:
    """Kronecker assembly of the aggregated plant, then discretization.

    Returns the discrete system (n = 4N states, m = N inputs) and the
    discretized per-microgrid load-disturbance input map (n x N).
    """
    Ac, Bc_u, Bc_w = network_matrices(blocks, topo)
    sys, Bw_d = discretize(Ac, Bc_u, Bc_w, dt, method)
    return sys, Bw_d


def benchmark_cost(topo: GridTopology, Qa: np.ndarray, Ra: np.ndarray) -> CostSpec:
    """Network stage cost: identical per-microgrid weights on states and inputs."""
    eye = np.eye(topo.n_mg)
    Qa = np.asarray(Qa, dtype=float)
    Ra = np.atleast_2d(np.asarray(Ra, dtype=float))
    return CostSpec(np.kron(eye, Qa), np.kron(eye, Ra))


def build_case(
    case: int,
    topo: GridTopology,
    params: MgParams,
    Qa: np.ndarray,
    Ra: np.ndarray,
    load_std: float,
    delta: float,
    dt: float,
    method: str = "zoh",
) -> Problem:
    """Assemble one benchmark experiment case.

    Case 1: graph-structured gain with the risk constraint. Case 2: full
    gain with the risk constraint. Case 3: full gain, unconstrained.
    """
    if case not in (1, 2, 3):
        raise ValueError("case must be 1, 2 or 3")
    sys, Bw_d = assemble_network(build_blocks(params), topo, dt, method)
    cost = benchmark_cost(topo, Qa, Ra)
    noise = NoiseModel.gaussian(
        mean=np.zeros(sys.n), qweight=cost.Q, factor=float(load_std) * Bw_d
    )
    if case == 1:
        pattern = pattern_from_graph(
            topo.edges, [STATES_PER_MG] * topo.n_mg, [1] * topo.n_mg, include_self=True
        )
    else:
        pattern = SparsityPattern.full(sys.m, sys.n)
    constraints = ()
    if case in (1, 2):
        constraints = (build_risk_constraint(cost.Q, noise, delta, sys.m),)
    return Problem(sys, noise, pattern, cost, constraints, basis=physical_basis(topo))


def riccati_baseline(problem: Problem) -> Tuple[float, StructuredGain]:
    """Full-feedback optimum: average cost trace(P W) and the optimal gain.

    Solved on the physical subspace when the problem carries a deflation
    basis; the returned gain acts on the full state and is zero along the
    conserved directions.
    """
    V = problem.basis
    if V is None:
        A, B = problem.sys.A, problem.sys.B
        Q, W = problem.cost.Q, problem.noise.W
        P, K = solve_dare(A, B, Q, problem.cost.R)
        cost = float(np.trace(P @ W))
        Kfull = K
    else:
        A = V.T @ problem.sys.A @ V
        B = V.T @ problem.sys.B
        Q = V.T @ problem.cost.Q @ V
        W = V.T @ problem.noise.W @ V
        P, K = solve_dare(A, B, 0.5 * (Q + Q.T), problem.cost.R)
        cost = float(np.trace(P @ (0.5 * (W + W.T))))
        Kfull = K @ V.T
    full = SparsityPattern.full(problem.m, problem.n)
    return cost, StructuredGain(full, Kfull)


def initial_stabilizing_gain(
    problem: Problem,
    scale: float = 1.0,
    rng: Optional[np.random.Generator] = None,
    n_random: int = 500,
) -> StructuredGain:
    """A structured stabilizing gain to start the optimizers from.

    Masks the (scaled) full-feedback Riccati gain to the pattern; if that
    destabilizes, shrinks it toward zero along 20 grid points (the last one
    exactly zero, so an open-loop-stable plant yields K = 0), and finally
    falls back to random masked gains scaled down until stable.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    best_rho = np.inf
    candidates = []
    try:
        _, Kstar = riccati_baseline(problem)
        base = project_structure(float(scale) * Kstar.values, problem.pattern)
        candidates.extend(
            project_structure(s * base.values, problem.pattern)
            for s in np.linspace(1.0, 0.0, 21)
        )
    except StabilizabilityError:
        candidates.append(StructuredGain.zeros(problem.pattern))

    for cand in candidates:
        rho = problem.closed_loop_radius(cand)
        best_rho = min(best_rho, rho)
        if rho < _STABLE:
            return cand

    norm_hint = max(float(np.linalg.norm(candidates[0].values)), 1.0)
    for _ in range(n_random):
        draw = project_structure(
            rng.standard_normal(problem.pattern.shape) * norm_hint / problem.pattern.nnz**0.5,
            problem.pattern,
        )
        gamma = 1.0
        for _ in range(40):
            cand = project_structure(gamma * draw.values, problem.pattern)
            rho = problem.closed_loop_radius(cand)
            best_rho = min(best_rho, rho)
            if rho < _STABLE:
                return cand
            gamma *= 0.5
    raise InitializationError(best_rho)
