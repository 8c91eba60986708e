import numpy as np
import pytest
from hypothesis import given, strategies as st

from sessprop.core import (
    InteractionEvent,
    InvalidInputError,
    MissingItemError,
    RankedScores,
    Session,
    Vocabulary,
    actions_from_session,
    actions_from_sessions,
    target_rank,
    top_n,
)


def _session(items, sid="s"):
    return Session(sid, tuple(items), tuple(float(i) for i in range(len(items))))


def test_actions_from_session_examples():
    acts = actions_from_session(_session([0, 1, 2]))
    assert [(a.prefix, a.target) for a in acts] == [((0,), 1), ((0, 1), 2)]
    assert [(a.prefix, a.target) for a in actions_from_session(_session([0, 1]))] == [((0,), 1)]
    with pytest.raises(InvalidInputError):
        actions_from_session(_session([0]))


@given(st.lists(st.lists(st.integers(0, 9), min_size=2, max_size=8), min_size=1, max_size=10))
def test_action_count_and_contiguity(item_lists):
    sessions = [_session(items, f"s{i}") for i, items in enumerate(item_lists)]
    acts = actions_from_sessions(sessions)
    assert len(acts) == sum(len(x) - 1 for x in item_lists)
    by_id = {s.session_id: s.items for s in sessions}
    for a in acts:
        seq = a.prefix + (a.target,)
        assert by_id[a.session_id][: len(seq)] == seq


def test_top_n_examples():
    v = Vocabulary(["a", "b", "c"])
    assert top_n(RankedScores.from_mapping({"a": 0.9, "b": 0.1}, v), 1) == [v.index("a")]
    assert top_n(RankedScores.from_mapping({"a": 0.5, "b": 0.5}, v), 2) == [v.index("a"), v.index("b")]
    assert top_n(RankedScores.from_mapping({"a": 1, "b": 2, "c": 3}, v), 2) == [v.index("c"), v.index("b")]


@given(st.lists(st.sampled_from([0.0, 1.0, 2.0, -np.inf, 0.5]), min_size=1, max_size=30), st.integers(1, 40))
def test_top_n_stable_and_consistent_with_rank(values, n):
    scores = RankedScores(np.array(values))
    first = top_n(scores, n)
    assert first == top_n(scores, n)
    full = sorted(range(len(values)), key=lambda i: (-values[i], i))
    assert first == full[:n]
    for pos, item in enumerate(full, start=1):
        assert target_rank(scores, item) == pos


def test_ranked_scores_rejects_nan_and_posinf():
    with pytest.raises(InvalidInputError):
        RankedScores(np.array([0.0, np.nan]))
    with pytest.raises(InvalidInputError):
        RankedScores(np.array([np.inf]))
    RankedScores(np.array([-np.inf, 1.0]))


def test_vocabulary_index_follows_id_order():
    v = Vocabulary(["z", "a", "m", "a"])
    assert v.ids == ("a", "m", "z")
    assert v.index("m") == 1 and v.item_id(2) == "z"
    with pytest.raises(MissingItemError):
        v.index("q")


def test_event_validation():
    with pytest.raises(InvalidInputError):
        InteractionEvent("", "i", 0.0)
    with pytest.raises(InvalidInputError):
        InteractionEvent("s", "i", float("nan"))
