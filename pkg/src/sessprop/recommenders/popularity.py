"""Context-free baseline: every prefix gets the training interaction counts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import InvalidInputError, RankedScores, Session


@dataclass(frozen=True)
class PopularityConfig:
    pass


class Popularity:
    kind = "popularity"

    def __init__(self, config: PopularityConfig = PopularityConfig()):
        self.config = config
        self.counts = np.zeros(0)

    def fit(self, sessions: Sequence[Session], n_items: int) -> "Popularity":
        counts = np.zeros(n_items)
        for s in sessions:
            np.add.at(counts, list(s.items), 1.0)
        self.counts = counts
        return self

    def score(self, prefix: Sequence[int]) -> RankedScores:
        if len(prefix) == 0:
            raise InvalidInputError("prefix must be non-empty")
        return RankedScores(self.counts.copy())

    def arrays(self) -> dict[str, np.ndarray]:
        return {"counts": self.counts}

    def meta(self) -> dict:
        return {"n_items": int(len(self.counts))}

    @classmethod
    def from_arrays(cls, config: PopularityConfig, meta: dict, arrays: dict[str, np.ndarray]) -> "Popularity":
        model = cls(config)
        model.counts = arrays["counts"]
        return model
