"""Next-item evaluation: HR@N and MRR@N overall and on propensity strata.

Every evaluated action leaves a record (target, rank within the top N or a
miss, and both action-wise propensities) so strata can be re-aggregated for
any percentile cutoff without scoring the model again.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import (
    InvalidInputError,
    RankedScores,
    Session,
    SessPropError,
    actions_from_session,
    target_rank,
)
from .propensity import (
    HISTORICAL,
    METHODS,
    TARGET,
    ItemPropensityTable,
    action_propensity_historical,
    action_propensity_target,
    stratify,
)

MISS = 0


class EvaluationError(SessPropError):
    pass


@dataclass(frozen=True)
class MetricResult:
    hit_rate: float
    mrr: float
    n: int
    action_count: int
    hits: int = 0

    def as_dict(self) -> dict:
        return {
            "hit_rate": self.hit_rate,
            "mrr": self.mrr,
            "n": self.n,
            "action_count": self.action_count,
            "hits": self.hits,
        }


def metrics_from_ranks(ranks: np.ndarray, n: int) -> MetricResult:
    """``ranks`` holds the 1-based target rank, or ``MISS`` when beyond ``n``."""
    ranks = np.asarray(ranks, dtype=np.int64)
    count = len(ranks)
    if count == 0:
        return MetricResult(0.0, 0.0, n, 0, 0)
    hit = (ranks != MISS) & (ranks <= n)
    hits = int(np.count_nonzero(hit))
    rr = math.fsum(1.0 / r for r in ranks[hit].tolist())
    return MetricResult(hits / count, rr / count, n, count, hits)


def _rank_in_list(target, ranked: Sequence, n: int) -> int:
    for pos, item in enumerate(ranked[:n], start=1):
        if item == target:
            return pos
    return MISS


def hit_rate(targets: Sequence, ranked_lists: Sequence[Sequence], n: int = 20) -> float:
    if len(targets) != len(ranked_lists):
        raise InvalidInputError("need exactly one ranked list per action")
    if not targets:
        return 0.0
    return sum(_rank_in_list(t, r, n) != MISS for t, r in zip(targets, ranked_lists)) / len(targets)


def mrr(targets: Sequence, ranked_lists: Sequence[Sequence], n: int = 20) -> float:
    if len(targets) != len(ranked_lists):
        raise InvalidInputError("need exactly one ranked list per action")
    if not targets:
        return 0.0
    ranks = [_rank_in_list(t, r, n) for t, r in zip(targets, ranked_lists)]
    return math.fsum(1.0 / r for r in ranks if r != MISS) / len(targets)


@dataclass(eq=False)
class ActionRecords:
    """Column store of per-action evaluation results, in session-then-step order."""

    session_id: list[str]
    step: np.ndarray
    target: np.ndarray
    rank: np.ndarray
    propensity_target: np.ndarray
    propensity_historical: np.ndarray
    n: int

    def __len__(self) -> int:
        return len(self.rank)

    def propensity(self, method: str) -> np.ndarray:
        if method == TARGET:
            return self.propensity_target
        if method == HISTORICAL:
            return self.propensity_historical
        raise InvalidInputError(f"unknown stratification method {method!r}; expected one of {METHODS}")

    def metrics(self, subset: np.ndarray | None = None) -> MetricResult:
        ranks = self.rank if subset is None else self.rank[subset]
        return metrics_from_ranks(ranks, self.n)

    def subset(self, idx: np.ndarray) -> "ActionRecords":
        return ActionRecords(
            [self.session_id[i] for i in idx],
            self.step[idx],
            self.target[idx],
            self.rank[idx],
            self.propensity_target[idx],
            self.propensity_historical[idx],
            self.n,
        )

    def write_tsv(self, path: str | Path, item_ids: Sequence[str] | None = None) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("session_id\tstep\ttarget_item\trank_or_miss\tpropensity_target\tpropensity_historical\n")
            for i in range(len(self)):
                target = item_ids[self.target[i]] if item_ids is not None else str(self.target[i])
                rank = "miss" if self.rank[i] == MISS else str(int(self.rank[i]))
                fh.write(
                    f"{self.session_id[i]}\t{int(self.step[i])}\t{target}\t{rank}\t"
                    f"{float(self.propensity_target[i])!r}\t{float(self.propensity_historical[i])!r}\n"
                )

    @classmethod
    def read_tsv(cls, path: str | Path, n: int, item_index: Mapping[str, int] | None = None) -> "ActionRecords":
        sids, steps, targets, ranks, pt, ph = [], [], [], [], [], []
        with open(path, encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                sid, step, target, rank, p_t, p_h = line.rstrip("\n").split("\t")
                sids.append(sid)
                steps.append(int(step))
                targets.append(item_index[target] if item_index is not None else int(target))
                ranks.append(MISS if rank == "miss" else int(rank))
                pt.append(float(p_t))
                ph.append(float(p_h))
        return cls(sids, np.array(steps, dtype=np.int64), np.array(targets, dtype=np.int64),
                   np.array(ranks, dtype=np.int64), np.array(pt), np.array(ph), n)


@dataclass
class EvaluationResult:
    metrics: MetricResult
    records: ActionRecords
    uninformative_actions: int = 0  # actions whose finite scores were all equal


def evaluate_ranks(
    score_fn: Callable[[tuple[int, ...]], RankedScores],
    sessions: Sequence[Session],
    n: int = 20,
    table: ItemPropensityTable | None = None,
    threads: int = 1,
) -> EvaluationResult:
    """Score every prefix of every session and keep the target's rank (or a miss)."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")

    def run_session(session: Session) -> list[tuple]:
        out = []
        for action in actions_from_session(session):
            try:
                scores = score_fn(action.prefix)
                rank = target_rank(scores, action.target)
            except SessPropError:
                raise
            except Exception as exc:
                raise EvaluationError(
                    f"scoring failed for session {action.session_id!r} step {action.step} "
                    f"(target item index {action.target}): {exc!r}"
                ) from exc
            finite = scores.values[np.isfinite(scores.values)]
            flat = finite.size == 0 or finite.max() == finite.min()
            p_t = action_propensity_target(action, table) if table is not None else 0.0
            p_h = action_propensity_historical(action, table) if table is not None else 0.0
            out.append((action.session_id, action.step, action.target, rank if rank <= n else MISS, p_t, p_h, flat))
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_session = list(pool.map(run_session, sessions))
    else:
        per_session = [run_session(s) for s in sessions]
    rows = [row for chunk in per_session for row in chunk]

    records = ActionRecords(
        [r[0] for r in rows],
        np.array([r[1] for r in rows], dtype=np.int64),
        np.array([r[2] for r in rows], dtype=np.int64),
        np.array([r[3] for r in rows], dtype=np.int64),
        np.array([r[4] for r in rows], dtype=np.float64),
        np.array([r[5] for r in rows], dtype=np.float64),
        n,
    )
    return EvaluationResult(records.metrics(), records, sum(r[6] for r in rows))


def evaluate_model(model, sessions: Sequence[Session], n: int = 20,
                   table: ItemPropensityTable | None = None, threads: int = 1) -> EvaluationResult:
    return evaluate_ranks(model.score, sessions, n, table, threads)


@dataclass
class StratifiedReport:
    method: str
    percentile: float
    cutoff: float
    q1_count: int
    q2_count: int
    q1: dict[str, MetricResult | None] = field(default_factory=dict)
    q2: dict[str, MetricResult | None] = field(default_factory=dict)

    def as_dict(self) -> dict:
        def conv(m):
            return None if m is None else m.as_dict()

        return {
            "method": self.method,
            "percentile": self.percentile,
            "cutoff": self.cutoff,
            "q1_count": self.q1_count,
            "q2_count": self.q2_count,
            "q1": {k: conv(v) for k, v in self.q1.items()},
            "q2": {k: conv(v) for k, v in self.q2.items()},
        }


def _shared_propensity(records_by_model: Mapping[str, ActionRecords], method: str) -> np.ndarray:
    if not records_by_model:
        raise InvalidInputError("need records for at least one model")
    it = iter(records_by_model.values())
    first = next(it)
    p = first.propensity(method)
    for other in it:
        if len(other) != len(first) or not np.array_equal(other.propensity(method), p):
            raise InvalidInputError("all models must be evaluated on the same actions")
    return p


def stratified_sweep(records_by_model: Mapping[str, ActionRecords], method: str,
                     grid: Sequence[float]) -> list[StratifiedReport]:
    """Re-aggregate cached ranks on Q1/Q2 for each percentile in ``grid``. Empty strata are ``None``."""
    p = _shared_propensity(records_by_model, method)
    reports = []
    for x in grid:
        split = stratify(p, x)
        rep = StratifiedReport(method, float(x), split.cutoff_value, len(split.q1), len(split.q2))
        for name, rec in records_by_model.items():
            rep.q1[name] = rec.metrics(split.q1) if len(split.q1) else None
            rep.q2[name] = rec.metrics(split.q2) if len(split.q2) else None
        reports.append(rep)
    return reports


def curve_rows(reports: Sequence[StratifiedReport]) -> list[tuple]:
    """Flatten sweep reports into (x, stratum, model, metric, value) rows; empty strata give ``None``."""
    rows = []
    for rep in reports:
        for stratum, per_model in (("Q1", rep.q1), ("Q2", rep.q2)):
            for model, m in per_model.items():
                rows.append((rep.percentile, stratum, model, "hit_rate", None if m is None else m.hit_rate))
                rows.append((rep.percentile, stratum, model, "mrr", None if m is None else m.mrr))
    return rows


@dataclass(frozen=True)
class RobustnessRatio:
    hit_rate: float | None
    mrr: float | None
    s1: MetricResult
    s2: MetricResult
    undefined: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "hit_rate": self.hit_rate,
            "mrr": self.mrr,
            "s1": self.s1.as_dict(),
            "s2": self.s2.as_dict(),
            "undefined": list(self.undefined),
        }


def robustness_ratio(records: ActionRecords, method: str = HISTORICAL, fraction: float = 10.0) -> RobustnessRatio:
    """Metric on the bottom-``fraction``% propensity actions over the metric on the top-``fraction``%."""
    if len(records) < 20:
        raise InvalidInputError(f"robustness ratio needs at least 20 actions, got {len(records)}")
    p = records.propensity(method)
    s1 = stratify(p, fraction).q1
    s2 = stratify(p, 100.0 - fraction).q2
    m1, m2 = records.metrics(s1), records.metrics(s2)
    undefined = []
    ratios = {}
    for name in ("hit_rate", "mrr"):
        num, den = getattr(m1, name), getattr(m2, name)
        if den == 0 or m1.action_count == 0:
            ratios[name] = None
            undefined.append(name)
        else:
            ratios[name] = num / den
    return RobustnessRatio(ratios["hit_rate"], ratios["mrr"], m1, m2, tuple(undefined))
