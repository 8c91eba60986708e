import math

import numpy as np
import pytest

from sessprop.core import InvalidInputError, RankedScores, Session
from sessprop.evaluation import (
    MISS,
    ActionRecords,
    EvaluationError,
    evaluate_model,
    evaluate_ranks,
    hit_rate,
    metrics_from_ranks,
    mrr,
    robustness_ratio,
    stratified_sweep,
)
from sessprop.propensity import HISTORICAL, METHODS, TARGET, stratify
from sessprop.recommenders import Popularity


def test_hit_rate_examples():
    assert hit_rate(["t"], [["t"]], 20) == 1.0
    assert hit_rate(["t"], [[f"x{i}" for i in range(20)] + ["t"]], 20) == 0.0
    lists = [["a"], ["b"], ["c"], ["z"]]
    assert hit_rate(["a", "b", "c", "d"], lists, 20) == 0.75


def test_mrr_examples():
    assert mrr(["t"], [["t"]]) == 1.0
    assert mrr(["t"], [["a", "b", "c", "t"]]) == 0.25
    assert mrr(["t", "u"], [["t"], ["a"]]) == 0.5


def test_metrics_from_ranks_with_miss():
    m = metrics_from_ranks(np.array([1, MISS, 2, MISS]), 20)
    assert m.hit_rate == 0.5 and m.mrr == pytest.approx(0.375) and m.hits == 2


class _Oracle:
    """Puts the session's next item on top; the lookup is keyed on the exact prefix."""

    def __init__(self, sessions, n_items, adversarial=False):
        self.next = {s.items[:k]: s.items[k] for s in sessions for k in range(1, len(s))}
        self.n_items, self.adversarial = n_items, adversarial

    def score(self, prefix):
        v = np.zeros(self.n_items)
        v[self.next[tuple(prefix)]] = -1.0 if self.adversarial else 1.0
        return RankedScores(v)


def _sessions():
    return [Session("a", (0, 1, 2, 3), (0, 1, 2, 3)), Session("b", (4, 5, 6), (4, 5, 6))]


def test_oracle_and_adversarial_models():
    sessions = _sessions()
    assert evaluate_model(_Oracle(sessions, 30), sessions, 20).metrics.hit_rate == 1.0
    assert evaluate_model(_Oracle(sessions, 30), sessions, 20).metrics.mrr == 1.0
    bad = evaluate_model(_Oracle(sessions, 30, adversarial=True), sessions, 20)
    assert bad.metrics.hit_rate == 0.0 and bad.metrics.mrr == 0.0


def _brute(model, sessions, n):
    ranks = []
    for s in sessions:
        for k in range(1, len(s.items)):
            v = model.score(s.items[:k]).values
            ranked = sorted(range(len(v)), key=lambda i: (-v[i], i))
            ranks.append(ranked.index(s.items[k]) + 1)
    hits = [r for r in ranks if r <= n]
    return len(hits) / len(ranks), math.fsum(1 / r for r in hits) / len(ranks)


def test_popularity_matches_script_oracle(small_dataset, small_table):
    pop = Popularity().fit(small_dataset.train_sessions, small_dataset.n_items)
    res = evaluate_model(pop, small_dataset.test_sessions, 20, small_table)
    hr, rr = _brute(pop, small_dataset.test_sessions, 20)
    assert abs(res.metrics.hit_rate - hr) <= 1e-12 and abs(res.metrics.mrr - rr) <= 1e-12


def test_threads_give_identical_records(small_dataset, small_sknn, small_table):
    one = evaluate_model(small_sknn, small_dataset.test_sessions, 20, small_table, threads=1)
    four = evaluate_model(small_sknn, small_dataset.test_sessions, 20, small_table, threads=4)
    assert np.array_equal(one.records.rank, four.records.rank)
    assert one.records.session_id == four.records.session_id


def test_order_preserving_transform_invariance(small_dataset, small_gru):
    base = evaluate_model(small_gru, small_dataset.test_sessions, 20)
    shifted = evaluate_ranks(lambda p: RankedScores(2 * small_gru.score(p).values + 1), small_dataset.test_sessions, 20)
    assert np.array_equal(base.records.rank, shifted.records.rank)


def test_scoring_failure_is_wrapped():
    def boom(prefix):
        raise RuntimeError("bad")

    with pytest.raises(EvaluationError, match="session 'a' step 1"):
        evaluate_ranks(boom, _sessions(), 20)


@pytest.fixture(scope="module")
def records(small_dataset, small_sknn, small_gru, small_table):
    return {
        "sknn": evaluate_model(small_sknn, small_dataset.test_sessions, 20, small_table).records,
        "gru4rec": evaluate_model(small_gru, small_dataset.test_sessions, 20, small_table).records,
    }


def test_cached_reaggregation_equals_direct_evaluation(records, small_dataset, small_sknn, small_table):
    p = records["sknn"].propensity(TARGET)
    split = stratify(p, 40)
    rec = records["sknn"]
    keep = {(rec.session_id[i], int(rec.step[i])) for i in split.q1}
    ranks = []
    for s in small_dataset.test_sessions:
        for k in range(1, len(s)):
            if (s.session_id, k) in keep:
                res = evaluate_ranks(small_sknn.score, [Session(s.session_id, s.items[: k + 1], s.timestamps[: k + 1])], 20)
                ranks.append(int(res.records.rank[-1]))
    direct = metrics_from_ranks(np.array(ranks), 20)
    cached = rec.metrics(split.q1)
    assert direct == cached


def test_sweep_decomposition_and_mrr_bound(records):
    for method in METHODS:
        for rep in stratified_sweep(records, method, [10, 25, 50, 75, 90, 100]):
            for name, rec in records.items():
                total = rec.metrics()
                parts = [m for m in (rep.q1[name], rep.q2[name]) if m is not None]
                assert sum(m.hits for m in parts) == total.hits
                rr = math.fsum(m.mrr * m.action_count for m in parts) / total.action_count
                assert abs(rr - total.mrr) < 1e-12
                for m in parts:
                    assert m.mrr <= m.hit_rate


def test_all_equal_propensity_gives_null_q1():
    rec = ActionRecords(["s"] * 4, np.arange(4), np.zeros(4, dtype=np.int64), np.array([1, 2, MISS, 1]),
                        np.ones(4), np.ones(4), 20)
    rep = stratified_sweep({"m": rec}, HISTORICAL, [10])[0]
    assert rep.q1["m"] is None and rep.q2["m"] == rec.metrics()


def test_robustness_ratio():
    n = 40
    rec = ActionRecords(["s"] * n, np.arange(n), np.zeros(n, dtype=np.int64), np.ones(n, dtype=np.int64),
                        np.arange(1.0, n + 1), np.arange(1.0, n + 1), 20)
    r = robustness_ratio(rec)
    assert r.hit_rate == 1.0 and r.mrr == 1.0
    # nearest-rank with ties to Q2: S1 = 3 lowest actions, S2 = 5 highest
    assert (r.s1.action_count, r.s2.action_count) == (3, 5)
    rec.rank[-5:] = MISS
    r = robustness_ratio(rec, HISTORICAL, 10)
    assert r.hit_rate is None and "hit_rate" in r.undefined
    with pytest.raises(InvalidInputError):
        robustness_ratio(rec.subset(np.arange(10)))


def test_records_tsv_round_trip(tmp_path, records, small_dataset):
    rec = records["gru4rec"]
    rec.write_tsv(tmp_path / "r.tsv", small_dataset.vocabulary.ids)
    index = {iid: i for i, iid in enumerate(small_dataset.vocabulary.ids)}
    back = ActionRecords.read_tsv(tmp_path / "r.tsv", 20, index)
    assert back.session_id == rec.session_id
    for col in ("step", "target", "rank", "propensity_target", "propensity_historical"):
        assert np.array_equal(getattr(back, col), getattr(rec, col))
