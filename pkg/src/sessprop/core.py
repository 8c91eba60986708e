"""Shared data model: events, sessions, evaluation actions and score vectors.

Item and session ids are opaque strings at the boundary. Inside a
:class:`Dataset` items are addressed by dense integer indices assigned in
ascending id order, so "ascending index" and "ascending item id" are the
same tie-break everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np


class SessPropError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(SessPropError, ValueError):
    """An argument violates an operation's precondition."""


class MissingItemError(SessPropError, KeyError):
    """An item id or index is not part of the training vocabulary."""


@dataclass(frozen=True)
class InteractionEvent:
    session_id: str
    item_id: str
    timestamp: float

    def __post_init__(self) -> None:
        if not self.session_id:
            raise InvalidInputError("session_id must be non-empty")
        if not self.item_id:
            raise InvalidInputError("item_id must be non-empty")
        if not self.timestamp >= 0:
            raise InvalidInputError(f"timestamp must be >= 0, got {self.timestamp}")


@dataclass(frozen=True)
class Session:
    """A session after preprocessing. ``items`` are dense item indices in time order."""

    session_id: str
    items: tuple[int, ...]
    timestamps: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.items) != len(self.timestamps):
            raise InvalidInputError("items and timestamps must have equal length")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def start_time(self) -> float:
        return self.timestamps[0]


@dataclass(frozen=True)
class Action:
    """One evaluation step: predict ``target`` after seeing ``prefix``."""

    session_id: str
    step: int
    prefix: tuple[int, ...]
    target: int
    propensity: float = 0.0


class Vocabulary:
    """Bidirectional mapping between opaque item ids and dense indices."""

    def __init__(self, item_ids: Iterable[str]):
        ids = sorted(set(item_ids))
        self._ids: tuple[str, ...] = tuple(ids)
        self._index = {item_id: i for i, item_id in enumerate(ids)}

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, item_id: object) -> bool:
        return item_id in self._index

    def __iter__(self) -> Iterator[str]:
        return iter(self._ids)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._ids == other._ids

    def __hash__(self) -> int:
        return hash(self._ids)

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    def index(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise MissingItemError(item_id) from None

    def item_id(self, index: int) -> str:
        if not 0 <= index < len(self._ids):
            raise MissingItemError(index)
        return self._ids[index]


@dataclass(frozen=True)
class Dataset:
    train_sessions: tuple[Session, ...]
    test_sessions: tuple[Session, ...]
    vocabulary: Vocabulary
    item_counts: np.ndarray  # training interaction count per item index
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_items(self) -> int:
        return len(self.vocabulary)

    def count_map(self) -> dict[str, int]:
        return {i: int(c) for i, c in zip(self.vocabulary.ids, self.item_counts)}


@dataclass(frozen=True, eq=False)
class RankedScores:
    """A score for every item of the training vocabulary, indexed by item index.

    ``-inf`` marks an item that is excluded from the recommendation list
    (e.g. SKNN drops items already in the prefix); every other score is finite.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise InvalidInputError("scores must be a 1-d vector")
        if np.isnan(values).any() or np.isposinf(values).any():
            raise InvalidInputError("scores must be finite or -inf")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def from_mapping(cls, scores: dict[str, float], vocabulary: Vocabulary) -> "RankedScores":
        values = np.zeros(len(vocabulary))
        for item_id, score in scores.items():
            values[vocabulary.index(item_id)] = score
        return cls(values)

    def to_mapping(self, vocabulary: Vocabulary) -> dict[str, float]:
        return {item_id: float(v) for item_id, v in zip(vocabulary.ids, self.values)}


def ranking_order(values: np.ndarray) -> np.ndarray:
    """Full ranking: descending score, ties by ascending index."""
    return np.argsort(-values, kind="stable")


def top_n(scores: RankedScores, n: int) -> list[int]:
    """Indices of the ``n`` best-scored items, best first; ties go to the lower index."""
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    values = scores.values
    if n >= len(values):
        return ranking_order(values).tolist()
    # everything scoring at least the n-th best value, re-ranked under the tie rule
    kth = np.partition(-values, n - 1)[n - 1]
    candidates = np.flatnonzero(-values <= kth)
    order = candidates[np.argsort(-values[candidates], kind="stable")]
    return order[:n].tolist()


def target_rank(scores: RankedScores, target: int) -> int:
    """1-based position of ``target`` in the full ranking (same tie rule as :func:`top_n`)."""
    values = scores.values
    t = values[target]
    better = np.count_nonzero(values > t)
    tied_before = np.count_nonzero(values[:target] == t)
    return int(better + tied_before + 1)


def actions_from_session(session: Session) -> list[Action]:
    """Reveal a session one item at a time: action ``k`` predicts item ``k+1`` from the first ``k``."""
    items = session.items
    if len(items) < 2:
        raise InvalidInputError(
            f"session {session.session_id!r} has {len(items)} item(s); need at least 2"
        )
    return [
        Action(session.session_id, k, tuple(items[:k]), items[k])
        for k in range(1, len(items))
    ]


def actions_from_sessions(sessions: Sequence[Session]) -> list[Action]:
    actions: list[Action] = []
    for session in sessions:
        actions.extend(actions_from_session(session))
    return actions
