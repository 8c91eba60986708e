import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sessprop.core import Action, MissingItemError, Vocabulary
from sessprop.propensity import (
    FitError,
    PowerLawParams,
    UndefinedCorrelationError,
    action_propensity_historical,
    action_propensity_target,
    fit_gamma,
    item_propensity,
    log_histogram,
    nearest_rank_percentile,
    pearson,
    read_table,
    strata_correlation,
    stratify,
    write_table,
)
from sessprop.synthetic import zipf_counts


def _table(values):
    return item_propensity(np.asarray(values, dtype=float), PowerLawParams(1.0))


def test_item_propensity_examples():
    assert item_propensity([4], PowerLawParams(1.0)).values[0] == 4.0
    assert item_propensity([16], PowerLawParams(0.0)).values[0] == 4.0
    assert PowerLawParams(0.8).exponent == pytest.approx(0.9)
    assert item_propensity([100], PowerLawParams(0.8)).values[0] == pytest.approx(100**0.9, rel=1e-12)
    assert item_propensity([100], PowerLawParams(0.8)).values[0] == pytest.approx(63.0957, abs=1e-4)


def test_action_propensities():
    t = _table([2, 4, 8])  # gamma=1 -> propensity equals count
    assert action_propensity_target(Action("s", 1, (0,), 1), t) == 4.0
    assert action_propensity_historical(Action("s", 1, (1,), 0), t) == 4.0
    assert action_propensity_historical(Action("s", 2, (0, 1), 2), t) == 3.0
    assert action_propensity_historical(Action("s", 3, (0, 0, 2), 1), t) == 4.0
    with pytest.raises(MissingItemError):
        t[7]


def test_fit_gamma_errors_and_meta():
    with pytest.raises(FitError):
        fit_gamma([5] * 20)
    with pytest.raises(FitError):
        fit_gamma([1, 2, 3])
    params = fit_gamma(zipf_counts(500, 50_000, 1.0, seed=1))
    assert set(params.fit_meta) >= {"slope", "intercept", "r2", "n_items"}
    assert params.fit_meta["slope"] < 0 < params.fit_meta["r2"] <= 1


def test_fit_gamma_exact_power_law():
    ranks = np.arange(1, 200)
    counts = np.round(1e6 * ranks**-1.5)
    assert fit_gamma(counts).gamma == pytest.approx(1.5, abs=1e-3)


def test_stratify_examples():
    s = stratify([1, 2, 3, 4], 50)
    assert s.cutoff_value == 2 and s.q1.tolist() == [0] and s.q2.tolist() == [1, 2, 3]
    s = stratify([3, 3, 3, 3], 50)
    assert s.q1.tolist() == [] and len(s.q2) == 4
    assert len(stratify([5, 1, 9, 2], 0).q1) == 0


def test_nearest_rank_matches_definition():
    v = np.array([15, 20, 35, 40, 50])
    assert nearest_rank_percentile(v, 30) == 20
    assert nearest_rank_percentile(v, 40) == 20
    assert nearest_rank_percentile(v, 50) == 35
    assert nearest_rank_percentile(v, 100) == 50


@given(st.lists(st.floats(0.1, 1e4), min_size=2, max_size=60),
       st.lists(st.floats(0, 100), min_size=2, max_size=6))
def test_strata_nested_and_partition(values, xs):
    xs = sorted(xs)
    prev = set()
    for x in xs:
        s = stratify(values, x)
        q1 = set(s.q1.tolist())
        assert prev <= q1
        assert len(s.q1) + len(s.q2) == len(values)
        prev = q1


@given(st.lists(st.integers(1, 10_000), min_size=2, max_size=50), st.integers(2, 100),
       st.sampled_from([0.0, 0.5, 1.0, 2.0]), st.floats(1, 99))
def test_strata_invariant_under_count_scaling(counts, c, gamma, x):
    params = PowerLawParams(gamma)
    counts = np.array(counts)
    a = stratify(item_propensity(counts, params).values, x)
    b = stratify(item_propensity(counts * c, params).values, x)
    assert a.q1.tolist() == b.q1.tolist()


def test_correlation_examples():
    t = _table([1, 10, 100, 1000])
    same = [Action("s", 1, (i,), i) for i in range(4)]
    assert strata_correlation(same, t).pearson_r == pytest.approx(1.0, abs=1e-12)
    anti = [Action("s", 1, (3 - i,), i) for i in range(4)]
    assert strata_correlation(anti, t).pearson_r == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(UndefinedCorrelationError):
        pearson(np.ones(3), np.arange(3.0))


def test_pearson_matches_textbook_formula():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=100), rng.normal(size=100)
    n = len(x)
    num = n * math.fsum(x * y) - math.fsum(x) * math.fsum(y)
    den = math.sqrt(n * math.fsum(x * x) - math.fsum(x) ** 2) * math.sqrt(n * math.fsum(y * y) - math.fsum(y) ** 2)
    assert abs(pearson(x, y) - num / den) < 1e-12


def test_histogram_mass_and_table_round_trip(tmp_path):
    counts = zipf_counts(300, 20_000, 1.0, seed=2)
    counts = counts[counts > 0]
    table = item_propensity(counts, fit_gamma(counts))
    hist = log_histogram(table, bins=20)
    assert sum(hist["counts"]) == len(counts) == hist["n_items"]
    vocab = Vocabulary(f"i{i:04d}" for i in range(len(counts)))
    write_table(table, vocab, tmp_path / "t.tsv")
    back = read_table(tmp_path / "t.tsv", vocab, table.params)
    assert np.array_equal(back.values, table.values)
