"""Non-dominated sorting and within-front ordering of (stretch, squeeze) scores.

Domination is the standard weak convention for minimization: candidate i
dominates j iff i <= j in every objective and i < j in at least one. Pure
functions throughout; safe for concurrent use.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import ObjectiveScores, ParetoRanking, SelectionStrategy


def _as_objective_matrix(scores) -> np.ndarray:
    if len(scores) > 0 and isinstance(scores[0], ObjectiveScores):
        pts = np.array([(s.stretch, s.squeeze) for s in scores], dtype=np.float64)
    else:
        pts = np.asarray(scores, dtype=np.float64)
        if pts.ndim != 2:
            raise ValueError(f"expected (n, m) objective matrix, got shape {pts.shape}")
    if np.any(np.isnan(pts)):
        raise ValueError("NaN in objective scores")
    return pts


def nondominated_sort(scores: Sequence[ObjectiveScores] | np.ndarray) -> np.ndarray:
    """Assign a Pareto front index (0 = non-dominated) to every candidate.

    NSGA-II style sort with domination counts, O(n^2 m); fronts are peeled
    iteratively. Accepts ObjectiveScores or a raw (n, m) objective matrix,
    all objectives minimized.
    """
    pts = _as_objective_matrix(scores)
    n = pts.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)

    # dominates[i, j]: i weakly better everywhere and strictly better somewhere
    le = np.all(pts[:, None, :] <= pts[None, :, :], axis=2)
    lt = np.any(pts[:, None, :] < pts[None, :, :], axis=2)
    dominates = le & lt

    count = dominates.sum(axis=0)  # how many candidates dominate each one
    front_of = np.full(n, -1, dtype=np.int64)
    current = np.flatnonzero(count == 0)
    front = 0
    while current.size:
        front_of[current] = front
        count[current] = -1  # retire
        freed = dominates[current].sum(axis=0)
        count = count - freed
        current = np.flatnonzero(count == 0)
        front += 1
    return front_of


def order_within_fronts(
    front_of: np.ndarray,
    scores: Sequence[ObjectiveScores],
    strategy: SelectionStrategy,
    ref_activation: float | None = None,
    rng: np.random.Generator | None = None,
) -> ParetoRanking:
    """Produce the total best-first candidate order for one generation.

    Primary key is the front index. Within a front, RANDOM applies a seeded
    shuffle (fresh draw per call, one per generation) and ACTIVATION_PROXIMITY
    sorts by |target_activation - ref_activation| ascending; ties fall back to
    candidate index ascending.
    """
    front_of = np.asarray(front_of, dtype=np.int64)
    n = front_of.shape[0]
    if len(scores) != n:
        raise ValueError("front_of and scores length mismatch")

    if strategy is SelectionStrategy.ACTIVATION_PROXIMITY:
        if ref_activation is None:
            raise ValueError("activation-proximity ordering needs ref_activation")
        proximity = np.array(
            [abs(s.target_activation - ref_activation) for s in scores]
        )
        order = np.lexsort((np.arange(n), proximity, front_of))
    elif strategy is SelectionStrategy.RANDOM:
        if rng is None:
            raise ValueError("random ordering needs an rng")
        shuffle_key = rng.permutation(n)
        order = np.lexsort((np.arange(n), shuffle_key, front_of))
    else:
        raise ValueError(f"unknown strategy {strategy!r}")

    return ParetoRanking(front_of=front_of, order=order, strategy=strategy)
