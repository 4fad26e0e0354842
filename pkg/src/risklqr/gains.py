"""Structured feedback gains: sparsity patterns, projection, unit perturbations.

The feasible gain set is "zero outside a fixed mask"; every operation here
preserves that mask exactly (bitwise), so optimizers can treat the nonzero
entries as the free coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class SparsityPattern:
    """Immutable boolean m x n mask with at least one allowed entry."""

    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool).copy()
        if mask.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
        if not mask.any():
            raise ValueError("pattern has no nonzero entries")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.mask.shape

    @property
    def nnz(self) -> int:
        return int(self.mask.sum())

    @staticmethod
    def full(m: int, n: int) -> "SparsityPattern":
        return SparsityPattern(np.ones((m, n), dtype=bool))


@dataclass(frozen=True)
class StructuredGain:
    """A feedback gain whose entries are exactly zero outside its pattern."""

    pattern: SparsityPattern
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).copy()
        if values.shape != self.pattern.shape:
            raise ValueError(
                f"values shape {values.shape} does not match pattern {self.pattern.shape}"
            )
        if not np.all(np.isfinite(values[self.pattern.mask])):
            raise ValueError("gain has non-finite entries")
        if np.any(values[~self.pattern.mask] != 0.0):
            raise ValueError("gain has nonzeros outside the pattern mask")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    @staticmethod
    def zeros(pattern: SparsityPattern) -> "StructuredGain":
        return StructuredGain(pattern, np.zeros(pattern.shape))


def pattern_from_graph(
    edges: Sequence[Tuple[int, int]],
    state_dims: Sequence[int],
    input_dims: Sequence[int],
    include_self: bool = True,
) -> SparsityPattern:
    """Block mask from a communication graph.

    Block (a, b) of the mask is allowed iff b == a (when ``include_self``)
    or (a, b) is an edge; undirected edges enable both directions. Agents
    are 0-indexed.
    """
    n_agents = len(state_dims)
    if len(input_dims) != n_agents:
        raise ValueError("state_dims and input_dims must have equal length")
    allowed = np.zeros((n_agents, n_agents), dtype=bool)
    if include_self:
        np.fill_diagonal(allowed, True)
    for a, b in edges:
        if not (0 <= a < n_agents and 0 <= b < n_agents):
            raise ValueError(f"edge ({a}, {b}) out of range for {n_agents} agents")
        allowed[a, b] = True
        allowed[b, a] = True
    row_off = np.concatenate([[0], np.cumsum(input_dims)])
    col_off = np.concatenate([[0], np.cumsum(state_dims)])
    mask = np.zeros((row_off[-1], col_off[-1]), dtype=bool)
    for a in range(n_agents):
        for b in range(n_agents):
            if allowed[a, b]:
                mask[row_off[a]:row_off[a + 1], col_off[b]:col_off[b + 1]] = True
    return SparsityPattern(mask)


def project_structure(dense: np.ndarray, pattern: SparsityPattern) -> StructuredGain:
    """Entrywise projection onto the pattern (zero the masked-out entries)."""
    dense = np.asarray(dense, dtype=float)
    if dense.shape != pattern.shape:
        raise ValueError(f"array shape {dense.shape} does not match pattern {pattern.shape}")
    return StructuredGain(pattern, np.where(pattern.mask, dense, 0.0))


def sample_unit_perturbation(pattern: SparsityPattern, rng: np.random.Generator) -> StructuredGain:
    """Uniform draw from the unit Frobenius sphere of the pattern's subspace.

    Nonzeros are standard gaussian then normalized, which is the standard
    rotation-invariant construction on the coordinate subspace.
    """
    while True:
        draws = rng.standard_normal(pattern.nnz)
        norm = float(np.linalg.norm(draws))
        if norm > 0.0:
            break
    values = np.zeros(pattern.shape)
    values[pattern.mask] = draws / norm
    return StructuredGain(pattern, values)
