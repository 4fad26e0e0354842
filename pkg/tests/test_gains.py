"""Sparsity patterns, structured gains, unit perturbations."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from risklqr.gains import (
    SparsityPattern,
    StructuredGain,
    pattern_from_graph,
    project_structure,
    sample_unit_perturbation,
)


def test_pattern_two_agents_diagonal():
    p = pattern_from_graph([], [1, 1], [1, 1], include_self=True)
    np.testing.assert_array_equal(p.mask, np.eye(2, dtype=bool))
    assert p.nnz == 2


def test_pattern_path_graph_block_count():
    edges = [(a, a + 1) for a in range(5)]
    p = pattern_from_graph(edges, [4] * 6, [1] * 6, include_self=True)
    # 2 end agents see 2 blocks of 4, 4 interior agents see 3 blocks of 4
    assert p.nnz == 2 * 2 * 4 + 4 * 3 * 4 == 64


def test_pattern_complete_graph_full_mask():
    edges = [(a, b) for a in range(3) for b in range(a + 1, 3)]
    p = pattern_from_graph(edges, [2, 2, 2], [1, 1, 1], include_self=True)
    assert p.mask.all()
    assert p.nnz == 3 * 6


def test_pattern_undirected_block_symmetry():
    edges = [(0, 2), (1, 2)]
    p = pattern_from_graph(edges, [1, 1, 1], [1, 1, 1], include_self=False)
    np.testing.assert_array_equal(p.mask, p.mask.T)


def test_pattern_empty_rejected():
    with pytest.raises(ValueError):
        SparsityPattern(np.zeros((2, 2), dtype=bool))


def test_gain_rejects_offmask_values():
    p = SparsityPattern(np.eye(2, dtype=bool))
    with pytest.raises(ValueError):
        StructuredGain(p, np.ones((2, 2)))


def test_project_structure_preserves_structured_input():
    p = SparsityPattern(np.array([[True, False], [False, True]]))
    vals = np.diag([1.5, -2.0])
    g = project_structure(vals, p)
    np.testing.assert_array_equal(g.values, vals)


def test_project_all_ones_diagonal_mask():
    p = SparsityPattern(np.eye(3, dtype=bool))
    g = project_structure(np.ones((3, 3)), p)
    np.testing.assert_array_equal(g.values, np.eye(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5), st.integers(2, 5))
def test_project_idempotent_and_closed(seed, m, n):
    rng = np.random.default_rng(seed)
    mask = rng.random((m, n)) > 0.5
    if not mask.any():
        mask[0, 0] = True
    p = SparsityPattern(mask)
    dense = rng.normal(size=(m, n))
    once = project_structure(dense, p)
    twice = project_structure(once.values, p)
    np.testing.assert_array_equal(once.values, twice.values)
    assert np.all(once.values[~mask] == 0.0)  # exact closure, bit test


def test_unit_perturbation_norm_and_mask():
    rng = np.random.default_rng(0)
    mask = np.array([[True, False, True], [False, True, False]])
    p = SparsityPattern(mask)
    for _ in range(20):
        u = sample_unit_perturbation(p, rng)
        assert abs(np.linalg.norm(u.values) - 1.0) < 1e-12
        assert np.all(u.values[~mask] == 0.0)


def test_unit_perturbation_single_entry_is_sign():
    p = SparsityPattern(np.array([[True]]))
    rng = np.random.default_rng(3)
    vals = {sample_unit_perturbation(p, rng).values[0, 0] for _ in range(20)}
    assert vals <= {1.0, -1.0}
    assert len(vals) == 2


def test_unit_perturbation_mean_and_isotropy():
    mask = np.ones((2, 2), dtype=bool)
    p = SparsityPattern(mask)
    rng = np.random.default_rng(11)
    n_draws = 10**5
    draws = np.empty((n_draws, 4))
    for i in range(n_draws):
        draws[i] = sample_unit_perturbation(p, rng).values.ravel()
    # symmetry: per-entry mean near zero at the 4-sigma CLT scale
    bound = 4.0 * (1.0 / np.sqrt(p.nnz)) / np.sqrt(n_draws)
    assert np.all(np.abs(draws.mean(axis=0)) < bound)
    # covariance of the nonzeros is I / nnz within 10 percent
    cov = draws.T @ draws / n_draws
    np.testing.assert_allclose(cov, np.eye(4) / 4.0, atol=0.1 / 4.0)
