"""Space-filling designs: Latin hypercube start and maximin batch selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .criteria import rank_order
from .errors import InsufficientCandidatesError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelectionConfig:
    batch_size: int
    cutoff_alpha: float = 0.5

    def __post_init__(self):
        if not 0 < self.cutoff_alpha <= 1:
            raise ValueError("cutoff_alpha must lie in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def latin_hypercube(n: int, dim: int, seed=None, box=None) -> np.ndarray:
    """Randomized Latin hypercube: one point per stratum in every coordinate."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    U = np.empty((n, dim))
    for j in range(dim):
        U[:, j] = (rng.permutation(n) + rng.uniform(size=n)) / n
    if box is None:
        return U
    box = np.asarray(box, dtype=float)
    return box[0] + U * (box[1] - box[0])


def cutoff_filter(scores, cutoff_alpha: float = 0.5) -> np.ndarray:
    """Boolean mask of scores reaching ``cutoff_alpha`` times the best score."""
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise ValueError("no scores to filter")
    return s >= cutoff_alpha * np.max(s)


def _min_dist(points, reference):
    if reference.shape[0] == 0:
        return np.full(points.shape[0], np.inf)
    diff = points[:, None, :] - reference[None, :, :]
    return np.sqrt(np.min(np.sum(diff * diff, axis=2), axis=1))


def maximin_select(candidates, existing, batch_size: int) -> np.ndarray:
    """Greedy maximin batch seeded with the first (top-ranked) candidate.

    Each further pick maximizes the Euclidean distance to the existing
    inputs plus everything already picked; distance ties go to the
    lexicographically smallest point.  Returns indices into ``candidates``.
    """
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    if C.shape[0] == 0:
        raise InsufficientCandidatesError("empty candidate set")
    if batch_size > C.shape[0]:
        raise InsufficientCandidatesError(
            f"batch of {batch_size} requested from {C.shape[0]} candidates"
        )
    E = np.asarray(existing, dtype=float).reshape(-1, C.shape[1])
    lex = rank_order(C, np.zeros(C.shape[0]))  # lexicographic order of candidates
    lex_rank = np.empty(C.shape[0], dtype=int)
    lex_rank[lex] = np.arange(C.shape[0])

    chosen = [0]
    dist = np.minimum(_min_dist(C, E), np.linalg.norm(C - C[0], axis=1))
    available = np.ones(C.shape[0], dtype=bool)
    available[0] = False
    while len(chosen) < batch_size:
        best = np.max(dist[available])
        ties = np.flatnonzero(available & (dist == best))
        pick = int(ties[np.argmin(lex_rank[ties])])
        chosen.append(pick)
        available[pick] = False
        dist = np.minimum(dist, np.linalg.norm(C - C[pick], axis=1))
    return np.array(chosen)


@dataclass
class BatchSelection:
    points: np.ndarray
    candidate_count: int
    relaxed: bool


def select_batch(points, scores, existing, config: SelectionConfig) -> BatchSelection:
    """Rank, apply the relative cutoff, drop duplicates, then pick by maximin.

    Candidates identical to an existing input or to a better-ranked
    candidate are discarded first so the batch never repeats a run.  When
    fewer than ``batch_size`` candidates survive the cutoff, the top
    ``batch_size`` unique ranked samples are used instead.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    s = np.asarray(scores, dtype=float)
    order = rank_order(X, s)
    X, s = X[order], s[order]
    E = np.asarray(existing, dtype=float).reshape(-1, X.shape[1])

    _, first = np.unique(X, axis=0, return_index=True)
    keep = np.zeros(X.shape[0], dtype=bool)
    keep[first] = True
    if E.shape[0]:
        keep &= _min_dist(X, E) > 0
    X, s = X[keep], s[keep]
    if X.shape[0] < config.batch_size:
        raise InsufficientCandidatesError(
            f"only {X.shape[0]} distinct new candidates for a batch of {config.batch_size}"
        )

    mask = cutoff_filter(s, config.cutoff_alpha)
    relaxed = False
    if np.count_nonzero(mask) < config.batch_size:
        log.warning(
            "cutoff kept %d candidates for a batch of %d; using the top-ranked samples",
            np.count_nonzero(mask), config.batch_size,
        )
        mask = np.zeros_like(mask)
        mask[: config.batch_size] = True
        relaxed = True
    cand = X[mask]
    idx = maximin_select(cand, E, config.batch_size)
    return BatchSelection(cand[idx], cand.shape[0], relaxed)
