"""Item propensity from observed popularity, action-wise propensity, and percentile strata.

An item observed ``n`` times gets the unnormalized propensity
``n ** ((gamma + 1) / 2)`` where ``gamma`` is the popularity-bias exponent.
Only the ordering and percentile membership matter downstream, so the
proportionality constant is fixed to 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import Action, InvalidInputError, MissingItemError, SessPropError, Vocabulary

TARGET = "target"
HISTORICAL = "historical"
METHODS = (TARGET, HISTORICAL)


class FitError(SessPropError):
    """The power-law exponent cannot be estimated from these counts."""


class UndefinedCorrelationError(SessPropError):
    pass


@dataclass(frozen=True)
class PowerLawParams:
    gamma: float
    fit_meta: dict = field(default_factory=lambda: {"source": "fixed"})

    def __post_init__(self) -> None:
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise InvalidInputError(f"gamma must be finite and >= 0, got {self.gamma}")

    @property
    def exponent(self) -> float:
        return (self.gamma + 1) / 2


def _as_count_array(item_counts: Mapping[str, int] | Sequence[int] | np.ndarray) -> np.ndarray:
    if isinstance(item_counts, Mapping):
        return np.array(list(item_counts.values()), dtype=np.float64)
    return np.asarray(item_counts, dtype=np.float64)


def fit_gamma(item_counts: Mapping[str, int] | Sequence[int] | np.ndarray) -> PowerLawParams:
    """Estimate gamma as the magnitude of the OLS slope of log(count) vs log(rank)."""
    counts = _as_count_array(item_counts)
    counts = counts[counts > 0]
    if len(counts) < 10:
        raise FitError(f"need at least 10 items with non-zero count, got {len(counts)}")
    if np.all(counts == counts[0]):
        raise FitError("all counts are equal; supply a fixed gamma")

    y = np.log(np.sort(counts)[::-1])
    x = np.log(np.arange(1, len(counts) + 1, dtype=np.float64))
    x_c, y_c = x - x.mean(), y - y.mean()
    slope = float(x_c @ y_c / (x_c @ x_c))
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    r2 = 1.0 - float(resid @ resid) / float(y_c @ y_c)
    return PowerLawParams(
        gamma=abs(slope),
        fit_meta={
            "source": "fitted",
            "slope": slope,
            "intercept": intercept,
            "r2": r2,
            "n_items": int(len(counts)),
        },
    )


@dataclass(frozen=True, eq=False)
class ItemPropensityTable:
    """Propensity per item index."""

    values: np.ndarray
    params: PowerLawParams

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, item: int) -> float:
        if not 0 <= item < len(self.values):
            raise MissingItemError(item)
        return float(self.values[item])


def item_propensity(item_counts: Sequence[int] | np.ndarray, params: PowerLawParams) -> ItemPropensityTable:
    counts = np.asarray(item_counts, dtype=np.float64)
    if counts.size and counts.min() < 1:
        raise InvalidInputError("every item count must be >= 1")
    return ItemPropensityTable(np.power(counts, params.exponent), params)


def action_propensity_target(action: Action, table: ItemPropensityTable) -> float:
    return table[action.target]


def action_propensity_historical(action: Action, table: ItemPropensityTable) -> float:
    """Mean item propensity over the prefix; repeated items count once per occurrence."""
    if not action.prefix:
        raise InvalidInputError("historical propensity needs a non-empty prefix")
    prefix = np.asarray(action.prefix)
    if prefix.min() < 0 or prefix.max() >= len(table):
        raise MissingItemError(int(prefix.max()))
    return float(table.values[prefix].mean())


def action_propensities(actions: Sequence[Action], table: ItemPropensityTable, method: str) -> np.ndarray:
    if method == TARGET:
        fn = action_propensity_target
    elif method == HISTORICAL:
        fn = action_propensity_historical
    else:
        raise InvalidInputError(f"unknown stratification method {method!r}; expected one of {METHODS}")
    return np.array([fn(a, table) for a in actions], dtype=np.float64)


def nearest_rank_percentile(values: np.ndarray, x: float) -> float:
    """Smallest value with at least ``x`` percent of the data at or below it.

    ``x = 0`` returns the minimum.
    """
    if not 0 <= x <= 100:
        raise InvalidInputError(f"percentile must lie in [0, 100], got {x}")
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    if len(ordered) == 0:
        raise InvalidInputError("percentile of an empty sequence")
    rank = math.ceil(x / 100 * len(ordered))
    return float(ordered[max(rank, 1) - 1])


@dataclass(frozen=True, eq=False)
class StratumSplit:
    cutoff_percentile: float
    cutoff_value: float
    q1: np.ndarray  # action indices with propensity < cutoff_value
    q2: np.ndarray  # the rest


def stratify(propensities: Sequence[float] | np.ndarray, x: float) -> StratumSplit:
    """Split actions at the nearest-rank ``x``-th percentile; ties at the cutoff go to Q2."""
    p = np.asarray(propensities, dtype=np.float64)
    if len(p) < 2:
        raise InvalidInputError("stratify needs at least 2 actions")
    cutoff = nearest_rank_percentile(p, x)
    below = p < cutoff
    return StratumSplit(float(x), cutoff, np.flatnonzero(below), np.flatnonzero(~below))


@dataclass(frozen=True, eq=False)
class CorrelationResult:
    pearson_r: float
    log_target: np.ndarray
    log_historical: np.ndarray


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("zero variance; correlation undefined")
    return float(xc @ yc) / math.sqrt(sxx * syy)


def strata_correlation(actions: Sequence[Action], table: ItemPropensityTable) -> CorrelationResult:
    """Pearson r between log10 target propensity and log10 historical-mean propensity."""
    if len(actions) < 2:
        raise InvalidInputError("correlation needs at least 2 actions")
    log_t = np.log10(action_propensities(actions, table, TARGET))
    log_h = np.log10(action_propensities(actions, table, HISTORICAL))
    return CorrelationResult(pearson(log_t, log_h), log_t, log_h)


def log_histogram(table: ItemPropensityTable, bins: int = 50) -> dict:
    """Histogram of log10 item propensity. Counts sum to the number of items."""
    logs = np.log10(table.values)
    lo, hi = float(logs.min()), float(logs.max())
    if hi == lo:
        hi = lo + 1.0
    counts, edges = np.histogram(logs, bins=bins, range=(lo, hi))
    return {
        "gamma": table.params.gamma,
        "exponent": table.params.exponent,
        "n_items": int(len(logs)),
        "bin_edges": [float(e) for e in edges],
        "counts": [int(c) for c in counts],
    }


def write_table(table: ItemPropensityTable, vocabulary: Vocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("item_id\tpropensity\n")
        for item_id, value in zip(vocabulary.ids, table.values):
            fh.write(f"{item_id}\t{float(value)!r}\n")


def read_table(path: str | Path, vocabulary: Vocabulary, params: PowerLawParams) -> ItemPropensityTable:
    values = np.zeros(len(vocabulary))
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            item_id, value = line.rstrip("\n").split("\t")
            values[vocabulary.index(item_id)] = float(value)
    return ItemPropensityTable(values, params)


def write_histogram(hist: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(hist, indent=2, sort_keys=True) + "\n", encoding="utf-8")
