import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sessprop.core import InvalidInputError, MissingItemError, Session, ranking_order
from sessprop.recommenders import SKNN, SknnConfig, session_similarity, sknn_score

item_sets = st.frozensets(st.integers(0, 20), min_size=1, max_size=10)


def _s(sid, items, t0=0.0):
    return Session(sid, tuple(items), tuple(t0 + i for i in range(len(items))))


def test_similarity_examples():
    a, b, c = 0, 1, 2
    assert session_similarity({a, b}, {a, b}, "jaccard") == 1.0
    assert session_similarity({a, b}, {b, c}, "jaccard") == pytest.approx(1 / 3)
    assert session_similarity({a, b}, {b, c}, "cosine") == pytest.approx(0.5)
    with pytest.raises(InvalidInputError):
        session_similarity(set(), {a})


@given(item_sets, item_sets, st.sampled_from(["cosine", "jaccard"]))
def test_similarity_symmetric_and_bounded(x, y, metric):
    s = session_similarity(x, y, metric)
    assert s == session_similarity(y, x, metric)
    assert 0.0 <= s <= 1.0


def test_score_example():
    model = SKNN(SknnConfig(k=2, sample_size=2, similarity="jaccard")).fit([_s("1", [0, 1]), _s("2", [0, 2])], 3)
    v = sknn_score(model, [0]).values
    assert v[1] == 0.5 and v[2] == 0.5 and v[0] == -math.inf


def test_no_overlap_gives_zero_scores():
    model = SKNN(SknnConfig(exclude_prefix=False)).fit([_s("1", [0, 1])], 3)
    assert np.all(model.score([2]).values == 0.0)


@pytest.mark.parametrize("similarity", ["cosine", "jaccard"])
@pytest.mark.parametrize("scoring", ["similarity_sum", "popularity_in_neighborhood"])
def test_single_session_top1(similarity, scoring):
    model = SKNN(SknnConfig(k=1, sample_size=1, similarity=similarity, neighbor_item_scoring=scoring))
    model.fit([_s("1", [0, 1])], 4)
    assert int(ranking_order(model.score([0]).values)[0]) == 1


def test_recency_sampling_keeps_latest_sessions():
    sessions = [_s(f"s{i}", [0, i + 1], t0=10.0 * i) for i in range(5)]
    model = SKNN(SknnConfig(k=2, sample_size=2)).fit(sessions, 6)
    neighbours, _ = model.neighbors([0])
    assert sorted(neighbours.tolist()) == [3, 4]


def test_similarity_ties_go_to_recent_session():
    sessions = [_s("old", [0, 1], 0.0), _s("new", [0, 2], 50.0)]
    model = SKNN(SknnConfig(k=1, sample_size=2)).fit(sessions, 3)
    assert model.neighbors([0])[0].tolist() == [1]


def test_popularity_mode_counts_neighbours():
    sessions = [_s("1", [0, 1, 2]), _s("2", [0, 1]), _s("3", [0, 2, 3, 4, 5])]
    model = SKNN(SknnConfig(k=3, sample_size=3, neighbor_item_scoring="popularity_in_neighborhood")).fit(sessions, 6)
    v = model.score([0]).values
    assert v[1] == 2 and v[2] == 2 and v[3] == 1


def test_index_has_entry_per_item_and_errors():
    model = SKNN().fit([_s("1", [0, 1]), _s("2", [2, 3])], 5)
    stats = model.index_stats()
    assert stats["index_entries"] == 5 and stats["items_with_sessions"] == 4
    with pytest.raises(MissingItemError):
        model.score([9])
    with pytest.raises(InvalidInputError):
        SknnConfig(k=10, sample_size=5)
