"""Propensity-stratified offline evaluation of session-based recommenders."""

from .core import (
    Action,
    Dataset,
    InteractionEvent,
    RankedScores,
    Session,
    SessPropError,
    Vocabulary,
    actions_from_session,
    actions_from_sessions,
    top_n,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "Dataset",
    "InteractionEvent",
    "RankedScores",
    "Session",
    "SessPropError",
    "Vocabulary",
    "actions_from_session",
    "actions_from_sessions",
    "top_n",
]
