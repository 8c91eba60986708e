"""Propensity-gated blends of SKNN and GRU4Rec scores.

Both score vectors are min-max normalised per action before mixing. The
fixed scheme swaps a symmetric pair of weights at a propensity threshold;
the dynamic scheme weights GRU4Rec by a shifted sigmoid of the negated,
standardised log propensity, so rarely-seen contexts lean on GRU4Rec and
popular ones on SKNN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import InvalidInputError, RankedScores, Session, SessPropError, actions_from_session, target_rank
from .evaluation import MISS, ActionRecords, EvaluationResult
from .propensity import HISTORICAL, ItemPropensityTable, action_propensity_historical, action_propensity_target

LOG_EPS = 1e-9
DEFAULT_W2_GRID = (1.0, 0.9, 0.8, 0.7, 0.5, 0.2)
DEFAULT_ALPHA_GRID = tuple(np.round(np.arange(-3.0, 3.0 + 1e-9, 0.25), 2).tolist())


class EnsembleUnavailableError(SessPropError):
    pass


@dataclass(frozen=True)
class FixedEnsembleConfig:
    threshold: float
    w2: float

    def __post_init__(self) -> None:
        if not 0 <= self.w2 <= 1:
            raise InvalidInputError(f"w2 must lie in [0, 1], got {self.w2}")


@dataclass(frozen=True)
class DynamicEnsembleConfig:
    alpha: float
    p_mean_hat: float
    p_std_hat: float
    epsilon: float = LOG_EPS

    def __post_init__(self) -> None:
        if not (math.isfinite(self.p_std_hat) and self.p_std_hat > 0):
            raise InvalidInputError("p_std_hat must be positive")


def normalize_scores(scores: RankedScores) -> RankedScores:
    """Min-max scale the finite scores to [0, 1]; a constant vector maps to zeros. ``-inf`` is kept."""
    v = scores.values
    finite = np.isfinite(v)
    out = v.copy()
    if finite.any():
        lo, hi = v[finite].min(), v[finite].max()
        out[finite] = (v[finite] - lo) / (hi - lo) if hi > lo else 0.0
    return RankedScores(out)


def _mix(a: np.ndarray, wa: float, b: np.ndarray, wb: float) -> np.ndarray:
    # a zero weight drops the model entirely, so its -inf exclusions do not leak in
    if wa == 0:
        return wb * b
    if wb == 0:
        return wa * a
    return wa * a + wb * b


def _check_vocab(s_knn: RankedScores, s_gru: RankedScores) -> None:
    if len(s_knn) != len(s_gru):
        raise InvalidInputError(f"vocabulary mismatch: {len(s_knn)} vs {len(s_gru)} items")


def fixed_weights(propensity: float, config: FixedEnsembleConfig) -> tuple[float, float]:
    """(GRU4Rec weight, SKNN weight)."""
    if propensity < config.threshold:
        return config.w2, 1.0 - config.w2
    return 1.0 - config.w2, config.w2


def fixed_weight_combine(s_knn: RankedScores, s_gru: RankedScores, action_propensity: float,
                         config: FixedEnsembleConfig) -> RankedScores:
    _check_vocab(s_knn, s_gru)
    w_gru, w_knn = fixed_weights(action_propensity, config)
    return RankedScores(_mix(s_gru.values, w_gru, s_knn.values, w_knn))


def normalized_log_propensity(p: float, config: DynamicEnsembleConfig) -> float:
    return (math.log(p + config.epsilon) - config.p_mean_hat) / config.p_std_hat


def dynamic_weights(action_propensity: float, config: DynamicEnsembleConfig) -> tuple[float, float]:
    """``w1`` (GRU4Rec) = 1 / (1 + exp(p_norm + alpha)); ``w2`` (SKNN) = 1 - w1."""
    if action_propensity < 0:
        raise InvalidInputError("propensity must be >= 0")
    t = normalized_log_propensity(action_propensity, config) + config.alpha
    if t >= 0:
        e = math.exp(-t)
        w1 = e / (1.0 + e)
    else:
        w1 = 1.0 / (1.0 + math.exp(t))
    return w1, 1.0 - w1


def dynamic_weight_combine(s_knn: RankedScores, s_gru: RankedScores, action_propensity: float,
                           config: DynamicEnsembleConfig) -> RankedScores:
    _check_vocab(s_knn, s_gru)
    w1, w2 = dynamic_weights(action_propensity, config)
    return RankedScores(_mix(s_gru.values, w1, s_knn.values, w2))


def estimate_log_stats(propensities: Sequence[float] | np.ndarray, epsilon: float = LOG_EPS) -> tuple[float, float]:
    """Sample mean and (n-1) standard deviation of ``log(p + epsilon)``."""
    p = np.asarray(propensities, dtype=np.float64)
    if len(p) < 2:
        raise EnsembleUnavailableError("need at least 2 training actions")
    logs = np.log(p + epsilon)
    std = float(np.std(logs, ddof=1))
    if not std > 0:
        raise EnsembleUnavailableError("log propensities have zero variance; dynamic ensemble unavailable")
    return float(np.mean(logs)), std


Weighting = Callable[[float], tuple[float, float]]  # propensity -> (w_gru, w_knn)


def evaluate_weightings(
    knn, gru, sessions: Sequence[Session], weightings: Mapping[str, Weighting],
    table: ItemPropensityTable, n: int = 20, method: str = HISTORICAL,
) -> dict[str, EvaluationResult]:
    """Evaluate several blends in one pass: each model scores every prefix once.

    ``method`` picks the action-wise propensity fed to the weightings.
    """
    names = list(weightings)
    rows: dict[str, list[int]] = {k: [] for k in names}
    sids, steps, targets, pts, phs = [], [], [], [], []
    for session in sessions:
        for action in actions_from_session(session):
            s_knn = normalize_scores(knn.score(action.prefix))
            s_gru = normalize_scores(gru.score(action.prefix))
            _check_vocab(s_knn, s_gru)
            p_t = action_propensity_target(action, table)
            p_h = action_propensity_historical(action, table)
            p = p_h if method == HISTORICAL else p_t
            for name in names:
                w_gru, w_knn = weightings[name](p)
                mixed = RankedScores(_mix(s_gru.values, w_gru, s_knn.values, w_knn))
                rank = target_rank(mixed, action.target)
                rows[name].append(rank if rank <= n else MISS)
            sids.append(action.session_id)
            steps.append(action.step)
            targets.append(action.target)
            pts.append(p_t)
            phs.append(p_h)
    common = (np.array(steps, dtype=np.int64), np.array(targets, dtype=np.int64))
    out = {}
    for name in names:
        rec = ActionRecords(list(sids), common[0], common[1], np.array(rows[name], dtype=np.int64),
                            np.array(pts), np.array(phs), n)
        out[name] = EvaluationResult(rec.metrics(), rec)
    return out


class EnsembleRecommender:
    """Blend two fitted models behind the plain ``score(prefix)`` contract.

    The action propensity is the historical mean over the prefix, which is
    known at prediction time.
    """

    kind = "ensemble"

    def __init__(self, knn, gru, table: ItemPropensityTable, weighting: Weighting):
        self.knn, self.gru, self.table, self.weighting = knn, gru, table, weighting

    def score(self, prefix: Sequence[int]) -> RankedScores:
        p = float(self.table.values[np.asarray(prefix, dtype=np.int64)].mean())
        w_gru, w_knn = self.weighting(p)
        s_knn = normalize_scores(self.knn.score(prefix))
        s_gru = normalize_scores(self.gru.score(prefix))
        _check_vocab(s_knn, s_gru)
        return RankedScores(_mix(s_gru.values, w_gru, s_knn.values, w_knn))


@dataclass(frozen=True)
class AlphaSearchResult:
    alpha: float
    validation_hit_rate: float
    scores: dict[float, float]


def grid_search_alpha(knn, gru, validation_sessions: Sequence[Session], table: ItemPropensityTable,
                      p_mean_hat: float, p_std_hat: float, grid: Sequence[float] = DEFAULT_ALPHA_GRID,
                      n: int = 20) -> AlphaSearchResult:
    """Pick the alpha with the best validation HR@n; ties go to the earlier grid entry."""
    if not grid:
        raise InvalidInputError("alpha grid is empty")
    weightings = {
        float(a): (lambda p, cfg=DynamicEnsembleConfig(float(a), p_mean_hat, p_std_hat): dynamic_weights(p, cfg))
        for a in grid
    }
    results = evaluate_weightings(knn, gru, validation_sessions, weightings, table, n)
    scores = {a: r.metrics.hit_rate for a, r in results.items()}
    best = max(scores, key=lambda a: (scores[a], -list(scores).index(a)))
    return AlphaSearchResult(best, scores[best], scores)
