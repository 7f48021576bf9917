import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kstest

from histmatch.design import (
    SelectionConfig,
    cutoff_filter,
    latin_hypercube,
    maximin_select,
    select_batch,
)
from histmatch.errors import InsufficientCandidatesError


def test_selection_config_validation():
    with pytest.raises(ValueError):
        SelectionConfig(5, 0.0)
    with pytest.raises(ValueError):
        SelectionConfig(0)


def test_lhs_two_points_one_dim():
    U = latin_hypercube(2, 1, seed=0)
    assert sorted(np.floor(U[:, 0] * 2).tolist()) == [0.0, 1.0]


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 50), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_lhs_strata(n, d, seed):
    U = latin_hypercube(n, d, seed=seed)
    assert U.shape == (n, d)
    for j in range(d):
        assert sorted(np.floor(U[:, j] * n).astype(int).tolist()) == list(range(n))


def test_lhs_uniform_marginals_and_reproducible():
    U = latin_hypercube(100, 2, seed=7)
    for j in range(2):
        assert kstest(U[:, j], "uniform").pvalue > 0.01
    np.testing.assert_array_equal(U, latin_hypercube(100, 2, seed=7))


def test_lhs_native_box():
    X = latin_hypercube(10, 2, seed=1, box=[[-1, 10], [1, 20]])
    assert np.all(X[:, 0] >= -1) and np.all(X[:, 0] <= 1)
    assert np.all(X[:, 1] >= 10) and np.all(X[:, 1] <= 20)


def test_cutoff_examples():
    assert cutoff_filter([10, 6, 4.9], 0.5).tolist() == [True, True, False]
    assert cutoff_filter([0, 0, 0], 0.5).all()


def test_cutoff_matches_scan():
    rng = np.random.default_rng(0)
    s = rng.exponential(size=1000)
    want = [v >= 0.5 * max(s) for v in s]
    assert cutoff_filter(s, 0.5).tolist() == want


def test_maximin_examples():
    C = np.array([[0.0], [0.5], [1.0]])
    np.testing.assert_array_equal(C[maximin_select(C, np.empty((0, 1)), 2)], [[0.0], [1.0]])
    C = np.array([[0.4], [0.9]])
    np.testing.assert_array_equal(C[maximin_select(C, [[0.5]], 2)], [[0.4], [0.9]])
    with pytest.raises(InsufficientCandidatesError):
        maximin_select(C, [[0.5]], 3)


def _min_dist(p, ref):
    return min(np.linalg.norm(p - r) for r in ref) if len(ref) else np.inf


def _check_greedy(C, E, idx):
    assert idx[0] == 0
    assert len(set(idx.tolist())) == len(idx)
    chosen = [C[0]]
    for k in range(1, len(idx)):
        ref = list(E) + chosen
        best = _min_dist(C[idx[k]], ref)
        for c in range(len(C)):
            if c not in idx[:k]:
                assert best >= _min_dist(C[c], ref) - 1e-12
        chosen.append(C[idx[k]])


def test_maximin_greedy_exhaustive():
    rng = np.random.default_rng(1)
    for _ in range(30):
        C = rng.uniform(size=(50, 2))
        E = rng.uniform(size=(rng.integers(0, 5), 2))
        _check_greedy(C, E, maximin_select(C, E, 5))


def test_maximin_scale_equivariant():
    rng = np.random.default_rng(2)
    C = rng.uniform(size=(30, 3))
    E = rng.uniform(size=(4, 3))
    a = maximin_select(C, E, 6)
    b = maximin_select(7.5 * C, 7.5 * E, 6)
    np.testing.assert_array_equal(a, b)


def test_maximin_distance_ties_lexicographic():
    # four corners equidistant from the seed at the center
    C = np.array([[0.5, 0.5], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0], [0.0, 0.0]])
    idx = maximin_select(C, np.empty((0, 2)), 2)
    np.testing.assert_array_equal(C[idx[1]], [0.0, 0.0])


def test_select_batch_seed_is_top_scored():
    rng = np.random.default_rng(3)
    X = rng.uniform(size=(200, 2))
    s = rng.uniform(size=200)
    out = select_batch(X, s, np.empty((0, 2)), SelectionConfig(10))
    np.testing.assert_array_equal(out.points[0], X[np.argmax(s)])
    kept = X[s >= 0.5 * s.max()]
    for p in out.points:
        assert np.any(np.all(kept == p, axis=1))
    assert not out.relaxed


def test_select_batch_drops_duplicates_and_existing():
    X = np.array([[0.1, 0.1], [0.1, 0.1], [0.9, 0.9], [0.5, 0.5], [0.2, 0.8]])
    s = np.array([5.0, 5.0, 4.0, 3.0, 3.0])
    out = select_batch(X, s, [[0.9, 0.9]], SelectionConfig(2))
    assert len(np.unique(out.points, axis=0)) == 2
    assert not np.any(np.all(out.points == [0.9, 0.9], axis=1))


def test_select_batch_relaxes_when_starved(caplog):
    X = np.array([[0.1], [0.2], [0.3], [0.4]])
    s = np.array([10.0, 1.0, 1.0, 1.0])
    out = select_batch(X, s, np.empty((0, 1)), SelectionConfig(3))
    assert out.relaxed and len(out.points) == 3
    assert "cutoff kept" in caplog.text
    with pytest.raises(InsufficientCandidatesError):
        select_batch(X, s, np.empty((0, 1)), SelectionConfig(5))


def test_small_sets_against_optimal_greedy_brute_force():
    # enumerate all sequences for tiny sets: greedy pick equals argmax with lexicographic ties
    rng = np.random.default_rng(4)
    for _ in range(20):
        C = np.round(rng.uniform(size=(6, 2)), 1)
        C = np.unique(C, axis=0)
        if len(C) < 3:
            continue
        rng.shuffle(C)
        idx = maximin_select(C, np.empty((0, 2)), 3)
        for k in range(1, 3):
            ref = C[idx[:k]]
            cands = [c for c in range(len(C)) if c not in idx[:k]]
            d = {c: _min_dist(C[c], ref) for c in cands}
            top = max(d.values())
            best = min((tuple(C[c]), c) for c in cands if d[c] == top)[1]
            assert idx[k] == best
    assert list(itertools.islice(range(3), 3)) == [0, 1, 2]
