"""Session-based recommenders sharing one contract: ``fit(sessions, n_items)`` and ``score(prefix)``."""

from typing import Protocol, Sequence

from ..core import RankedScores, Session
from .gru4rec import GRU4Rec, Gru4RecConfig, gru4rec_score, gru4rec_train, gru_cell_forward
from .losses import bpr_max_grad, bpr_max_loss
from .persistence import load_model, save_model
from .popularity import Popularity, PopularityConfig
from .sknn import SKNN, SknnConfig, session_similarity, sknn_score


class Recommender(Protocol):
    kind: str

    def fit(self, sessions: Sequence[Session], n_items: int) -> "Recommender": ...

    def score(self, prefix: Sequence[int]) -> RankedScores: ...


__all__ = [
    "GRU4Rec",
    "Popularity",
    "PopularityConfig",
    "Gru4RecConfig",
    "Recommender",
    "SKNN",
    "SknnConfig",
    "bpr_max_grad",
    "bpr_max_loss",
    "gru4rec_score",
    "gru4rec_train",
    "gru_cell_forward",
    "load_model",
    "save_model",
    "session_similarity",
    "sknn_score",
]
