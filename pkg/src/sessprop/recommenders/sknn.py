"""Session-based k-nearest-neighbours."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import InvalidInputError, MissingItemError, RankedScores, Session

COSINE = "cosine"
JACCARD = "jaccard"
SIMILARITY_SUM = "similarity_sum"
POPULARITY = "popularity_in_neighborhood"


@dataclass(frozen=True)
class SknnConfig:
    k: int = 100
    sample_size: int = 500
    similarity: str = COSINE
    neighbor_item_scoring: str = SIMILARITY_SUM
    exclude_prefix: bool = True

    def __post_init__(self) -> None:
        if self.k < 1 or self.sample_size < 1:
            raise InvalidInputError("k and sample_size must be positive")
        if self.k > self.sample_size:
            raise InvalidInputError(f"k ({self.k}) must not exceed sample_size ({self.sample_size})")
        if self.similarity not in (COSINE, JACCARD):
            raise InvalidInputError(f"unknown similarity {self.similarity!r}")
        if self.neighbor_item_scoring not in (SIMILARITY_SUM, POPULARITY):
            raise InvalidInputError(f"unknown neighbor_item_scoring {self.neighbor_item_scoring!r}")


def session_similarity(s1: set | frozenset, s2: set | frozenset, metric: str = COSINE) -> float:
    if not s1 or not s2:
        raise InvalidInputError("similarity is undefined for an empty session")
    common = len(s1 & s2)
    if metric == JACCARD:
        return common / len(s1 | s2)
    if metric == COSINE:
        return common / math.sqrt(len(s1) * len(s2))
    raise InvalidInputError(f"unknown similarity {metric!r}")


def _similarity_from_sizes(common: np.ndarray, prefix_size: int, session_sizes: np.ndarray, metric: str) -> np.ndarray:
    common = common.astype(np.float64)
    if metric == JACCARD:
        return common / (prefix_size + session_sizes - common)
    return common / np.sqrt(prefix_size * session_sizes.astype(np.float64))


class SKNN:
    """Neighbours are drawn from the ``sample_size`` most recent training sessions
    that share an item with the prefix; the ``k`` most similar of those vote for
    their items.

    Training sessions are stored as item sets. Recency is the time of a
    session's last event, ties broken by position in the training partition
    (later wins). Neighbour ties on similarity also go to the more recent
    session.
    """

    kind = "sknn"

    def __init__(self, config: SknnConfig = SknnConfig()):
        self.config = config
        self.n_items = 0
        self._offsets = np.zeros(1, dtype=np.int64)
        self._items = np.zeros(0, dtype=np.int64)
        self._last_time = np.zeros(0)

    @property
    def n_sessions(self) -> int:
        return len(self._offsets) - 1

    def fit(self, sessions: Sequence[Session], n_items: int) -> "SKNN":
        if not sessions:
            raise InvalidInputError("cannot fit SKNN on an empty training partition")
        item_sets = [np.unique(np.asarray(s.items, dtype=np.int64)) for s in sessions]
        last_time = np.array([s.timestamps[-1] for s in sessions], dtype=np.float64)
        return self._build(item_sets, last_time, n_items)

    def _build(self, item_sets: list[np.ndarray], last_time: np.ndarray, n_items: int) -> "SKNN":
        self.n_items = int(n_items)
        sizes = np.array([len(s) for s in item_sets], dtype=np.int64)
        self._offsets = np.concatenate([[0], np.cumsum(sizes)])
        self._items = np.concatenate(item_sets) if item_sets else np.zeros(0, dtype=np.int64)
        if self._items.size and (self._items.min() < 0 or self._items.max() >= self.n_items):
            raise MissingItemError(int(self._items.max()))
        self._last_time = last_time
        self._sizes = sizes
        # recency rank: larger is more recent
        order = np.lexsort((np.arange(len(sizes)), last_time))
        self._recency = np.empty(len(sizes), dtype=np.int64)
        self._recency[order] = np.arange(len(sizes))
        # inverted index item -> sessions, CSR layout
        session_of = np.repeat(np.arange(len(sizes)), sizes)
        by_item = np.lexsort((session_of, self._items))
        self._post_sessions = session_of[by_item]
        self._post_offsets = np.searchsorted(self._items[by_item], np.arange(self.n_items + 1))
        return self

    def session_items(self, s: int) -> np.ndarray:
        return self._items[self._offsets[s] : self._offsets[s + 1]]

    def sessions_with_item(self, item: int) -> np.ndarray:
        return self._post_sessions[self._post_offsets[item] : self._post_offsets[item + 1]]

    def index_stats(self) -> dict:
        postings = np.diff(self._post_offsets)
        return {
            "sessions": self.n_sessions,
            "items": self.n_items,
            "index_entries": int(len(postings)),
            "items_with_sessions": int(np.count_nonzero(postings)),
            "max_posting_length": int(postings.max()) if len(postings) else 0,
        }

    def neighbors(self, prefix: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Neighbour session indices and similarities, best first."""
        if len(prefix) == 0:
            raise InvalidInputError("prefix must be non-empty")
        pset = np.unique(np.asarray(prefix, dtype=np.int64))
        if pset.min() < 0 or pset.max() >= self.n_items:
            raise MissingItemError(int(pset.max()))
        postings = [self.sessions_with_item(i) for i in pset]
        if not postings:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        candidates, common = np.unique(np.concatenate(postings), return_counts=True)
        if len(candidates) > self.config.sample_size:
            keep = np.argsort(-self._recency[candidates], kind="stable")[: self.config.sample_size]
            candidates, common = candidates[keep], common[keep]
        sims = _similarity_from_sizes(common, len(pset), self._sizes[candidates], self.config.similarity)
        order = np.lexsort((-self._recency[candidates], -sims))[: self.config.k]
        return candidates[order], sims[order]

    def score(self, prefix: Sequence[int]) -> RankedScores:
        neighbors, sims = self.neighbors(prefix)
        scores = np.zeros(self.n_items)
        weight = sims if self.config.neighbor_item_scoring == SIMILARITY_SUM else np.ones_like(sims)
        for s, w in zip(neighbors, weight):
            scores[self.session_items(s)] += w
        if self.config.exclude_prefix:
            scores[np.asarray(prefix, dtype=np.int64)] = -np.inf
        return RankedScores(scores)

    # persistence hooks
    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "session_offsets": self._offsets,
            "session_items": self._items,
            "session_last_time": self._last_time,
        }

    def meta(self) -> dict:
        return {"n_items": self.n_items}

    @classmethod
    def from_arrays(cls, config: SknnConfig, meta: dict, arrays: dict[str, np.ndarray]) -> "SKNN":
        offsets = arrays["session_offsets"]
        items = arrays["session_items"]
        item_sets = [items[offsets[i] : offsets[i + 1]] for i in range(len(offsets) - 1)]
        return cls(config)._build(item_sets, arrays["session_last_time"], meta["n_items"])


def sknn_score(model: SKNN, prefix: Sequence[int]) -> RankedScores:
    return model.score(prefix)
