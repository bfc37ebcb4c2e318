"""Inverse-distance-weighted nearest-neighbour estimates of response scores.

Identical state-action pairs in the logged data can carry different scores
(the judge is itself stochastic), and the policy will propose pairs that never
occur in the data. Both cases are served by the same estimator: a weighted
average over the k nearest logged pairs, with weights 1/d.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

EXACT_EPS = 1e-9


@dataclass(frozen=True)
class ScoreIndex:
    keys: np.ndarray      # (n, key_dim)
    scores: np.ndarray    # (n,)

    def __post_init__(self):
        if self.keys.ndim != 2 or self.scores.shape != (self.keys.shape[0],):
            raise ValueError("keys must be (n, dim) and scores (n,)")
        integral = bool(np.all(self.keys == np.round(self.keys))) and np.abs(self.keys).max(initial=0) < 2 ** 20
        object.__setattr__(self, "_integral", integral)
        object.__setattr__(self, "_sqnorms", np.square(self.keys).sum(axis=1))

    def sq_distances(self, q: np.ndarray) -> np.ndarray:
        # Integer-valued keys and query: the expanded form is exact in float64.
        if self._integral and np.all(q == np.round(q)) and np.abs(q).max(initial=0) < 2 ** 20:
            return np.maximum(self._sqnorms + q @ q - 2.0 * (self.keys @ q), 0.0)
        return np.square(self.keys - q).sum(axis=1)

    def __len__(self):
        return len(self.scores)


def build_index(train_conversations: Iterable[Sequence], encoder: Callable) -> ScoreIndex:
    """One entry per training record, in record order.

    ``encoder(conversation)`` must return the list of [state action] keys for
    the conversation's logged turns.
    """
    keys, scores = [], []
    for conv in train_conversations:
        conv_keys = encoder(conv)
        if len(conv_keys) != len(conv):
            raise ValueError("encoder must return one key per turn")
        keys.extend(conv_keys)
        scores.extend(r.response_score for r in conv)
    if not keys:
        raise ValueError("cannot build a score index from an empty training set")
    return ScoreIndex(np.asarray(keys, dtype=float), np.asarray(scores, dtype=float))


def estimate(index: ScoreIndex, query, k: int = 5) -> float:
    """Estimated score for ``query``.

    Any index entries within EXACT_EPS of the query are averaged (the 1/d
    weighting is singular there). Otherwise the k nearest entries by Euclidean
    distance are combined with weights 1/d; ties at the k-th place go to the
    lower index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(index):
        raise ValueError(f"k={k} exceeds index size {len(index)}")
    q = np.asarray(query, dtype=float)
    if q.shape != (index.keys.shape[1],):
        raise ValueError(f"query length {q.shape} != key length {index.keys.shape[1]}")
    d = np.sqrt(index.sq_distances(q))
    exact = d < EXACT_EPS
    if exact.any():
        return float(index.scores[exact].mean())
    nearest = _k_smallest(d, k)
    w = 1.0 / d[nearest]
    return float((w * index.scores[nearest]).sum() / w.sum())


def _k_smallest(d: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest entries; ties at the boundary resolved by index order."""
    if k == len(d):
        return np.arange(k)
    kth = np.partition(d, k - 1)[k - 1]
    below = np.flatnonzero(d < kth)
    tied = np.flatnonzero(d == kth)[: k - len(below)]
    return np.concatenate([below, tied])


class ScoreEstimator:
    """Memoizing wrapper used by the environment; the index never changes."""

    def __init__(self, index: ScoreIndex, k: int = 5):
        if k > len(index):
            raise ValueError(f"k={k} exceeds index size {len(index)}")
        self.index = index
        self.k = k
        self._cache: dict[bytes, float] = {}

    def __call__(self, query) -> float:
        q = np.asarray(query, dtype=float)
        key = q.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = estimate(self.index, q, self.k)
        return hit


def global_mean_estimator(index: ScoreIndex) -> Callable:
    """Context-free fallback that ignores the query."""
    mean = float(index.scores.mean())
    return lambda query: mean
