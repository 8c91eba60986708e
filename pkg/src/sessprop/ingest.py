"""Raw session-log parsing, support filtering and the temporal train/test split."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .core import Dataset, InteractionEvent, InvalidInputError, Session, SessPropError, Vocabulary

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0


class ConfigurationError(SessPropError):
    """The column mapping or preprocessing config does not fit the input."""


class ParseError(SessPropError):
    def __init__(self, message: str, line: int | None = None):
        self.reason = message
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DegenerateDatasetError(SessPropError):
    """Filtering or splitting left nothing to train or evaluate on."""


@dataclass(frozen=True)
class ColumnMapping:
    """How to read one delimited log file.

    ``time_scale`` converts the time column to seconds (0.001 for epoch
    milliseconds). ``time_offset_col`` is added to the parsed time after
    scaling by ``time_offset_scale`` (Diginetica stores a date plus a
    millisecond offset). ``session_gap`` splits a key's events into sessions
    whenever the idle time exceeds that many seconds, for logs that only carry
    a visitor id.
    """

    session_col: str = "SessionId"
    item_col: str = "ItemId"
    time_col: str = "Time"
    delimiter: str | None = None
    time_scale: float = 1.0
    time_offset_col: str | None = None
    time_offset_scale: float = 1.0
    filter_col: str | None = None
    filter_value: str | None = None
    session_gap: float | None = None
    strict: bool = False


PRESETS: dict[str, ColumnMapping] = {
    "session-rec": ColumnMapping(delimiter="\t"),
    "diginetica": ColumnMapping(
        session_col="sessionId",
        item_col="itemId",
        time_col="eventdate",
        delimiter=";",
        time_offset_col="timeframe",
        time_offset_scale=0.001,
    ),
    "retailrocket": ColumnMapping(
        session_col="visitorid",
        item_col="itemid",
        time_col="timestamp",
        delimiter=",",
        time_scale=0.001,
        filter_col="event",
        filter_value="view",
        session_gap=1800.0,
    ),
    "30music": ColumnMapping(delimiter="\t"),
}


@dataclass
class ParseResult:
    events: list[InteractionEvent]
    rows: int = 0
    skipped: int = 0
    skip_reasons: Counter = field(default_factory=Counter)


def parse_time(raw: str) -> float:
    """Epoch seconds (int or float) or an ISO-8601 date/datetime (naive = UTC)."""
    raw = raw.strip()
    try:
        return float(raw)
    except ValueError:
        pass
    text = raw[:-1] + "+00:00" if raw.endswith("Z") else raw
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _sniff_delimiter(header: str) -> str:
    try:
        return csv.Sniffer().sniff(header, delimiters=",\t;").delimiter
    except csv.Error:
        return "\t" if "\t" in header else ","


def parse_events(source: BinaryIO | str | Path, mapping: ColumnMapping = ColumnMapping()) -> ParseResult:
    """Read a delimited log with a header row into interaction events.

    Malformed rows raise :class:`ParseError` in strict mode and are skipped
    and counted otherwise. A mapped column missing from the header is always
    a :class:`ConfigurationError`.
    """
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            return parse_events(fh, mapping)

    text = io.TextIOWrapper(source, encoding="utf-8", newline="")
    header_line = text.readline()
    if not header_line:
        return ParseResult(events=[])
    delimiter = mapping.delimiter or _sniff_delimiter(header_line)
    header = next(csv.reader([header_line], delimiter=delimiter))
    header = [h.strip() for h in header]

    needed = [mapping.session_col, mapping.item_col, mapping.time_col]
    needed += [c for c in (mapping.time_offset_col, mapping.filter_col) if c]
    missing = [c for c in needed if c not in header]
    if missing:
        raise ConfigurationError(f"column(s) {missing} not in header {header}")
    col = {name: header.index(name) for name in needed}

    result = ParseResult(events=[])
    reader = csv.reader(text, delimiter=delimiter)
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        result.rows += 1
        try:
            if len(row) < len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line_no)
            if mapping.filter_col and row[col[mapping.filter_col]] != mapping.filter_value:
                result.rows -= 1
                continue
            session_id = row[col[mapping.session_col]].strip()
            item_id = row[col[mapping.item_col]].strip()
            if not session_id or not item_id:
                raise ParseError("empty session or item id", line_no)
            try:
                ts = parse_time(row[col[mapping.time_col]]) * mapping.time_scale
                if mapping.time_offset_col:
                    ts += float(row[col[mapping.time_offset_col]]) * mapping.time_offset_scale
            except ValueError as exc:
                raise ParseError(f"unparseable time: {exc}", line_no) from None
            if not (math.isfinite(ts) and ts >= 0):
                raise ParseError(f"time out of range: {ts}", line_no)
        except ParseError as exc:
            if mapping.strict:
                raise
            result.skipped += 1
            result.skip_reasons[exc.reason.split(":")[0]] += 1
            continue
        result.events.append(InteractionEvent(session_id, item_id, ts))

    if mapping.session_gap is not None:
        result.events = split_by_gap(result.events, mapping.session_gap)
    if result.skipped:
        logger.warning("skipped %d malformed row(s): %s", result.skipped, dict(result.skip_reasons))
    return result


def split_by_gap(events: Sequence[InteractionEvent], gap: float) -> list[InteractionEvent]:
    """Re-key events so each key's activity is cut into sessions at idle gaps > ``gap`` seconds."""
    by_key: dict[str, list[tuple[int, InteractionEvent]]] = defaultdict(list)
    for pos, ev in enumerate(events):
        by_key[ev.session_id].append((pos, ev))
    out: list[tuple[int, InteractionEvent]] = []
    for key, evs in by_key.items():
        evs.sort(key=lambda pe: pe[1].timestamp)
        part, last = 0, None
        for pos, ev in evs:
            if last is not None and ev.timestamp - last > gap:
                part += 1
            last = ev.timestamp
            out.append((pos, InteractionEvent(f"{key}_{part}", ev.item_id, ev.timestamp)))
    out.sort(key=lambda pe: pe[0])
    return [ev for _, ev in out]


@dataclass(frozen=True)
class PreprocessConfig:
    """Filter thresholds and the test split.

    Exactly one of ``test_days`` (sessions starting in the last N days),
    ``test_fraction`` (latest fraction of sessions) or ``split_time``
    (sessions starting strictly after an absolute epoch time) is used; the
    resolved cutoff is stored in the dataset meta.
    """

    min_item_support: int = 5
    min_session_length: int = 2
    test_days: float | None = None
    test_fraction: float | None = None
    split_time: float | None = None

    def __post_init__(self) -> None:
        if self.test_days is None and self.test_fraction is None and self.split_time is None:
            object.__setattr__(self, "test_days", 1.0)
        if self.min_item_support < 1:
            raise ConfigurationError("min_item_support must be >= 1")
        if self.min_session_length < 2:
            raise ConfigurationError("min_session_length must be >= 2")
        chosen = [x for x in (self.test_days, self.test_fraction, self.split_time) if x is not None]
        if len(chosen) != 1:
            raise ConfigurationError(
                "exactly one of test_days, test_fraction, split_time must be set"
            )
        if self.test_days is not None and not self.test_days > 0:
            raise ConfigurationError("test_days must be positive")
        if self.test_fraction is not None and not 0 < self.test_fraction < 1:
            raise ConfigurationError("test_fraction must lie in (0, 1)")


RawSession = tuple[str, list[str], list[float]]


def _group_sessions(events: Iterable[InteractionEvent]) -> list[RawSession]:
    grouped: dict[str, list[InteractionEvent]] = {}
    for ev in events:
        grouped.setdefault(ev.session_id, []).append(ev)
    sessions = []
    for sid, evs in grouped.items():
        evs.sort(key=lambda e: e.timestamp)  # stable: same-second events keep file order
        sessions.append((sid, [e.item_id for e in evs], [e.timestamp for e in evs]))
    return sessions


def filter_sessions(sessions: list[RawSession], min_support: int, min_length: int) -> list[RawSession]:
    while True:
        counts = Counter(item for _, items, _ in sessions for item in items)
        rare = {item for item, c in counts.items() if c < min_support}
        changed = False
        kept = []
        for sid, items, times in sessions:
            if rare:
                pairs = [(i, t) for i, t in zip(items, times) if i not in rare]
                if len(pairs) != len(items):
                    changed = True
                    items, times = [p[0] for p in pairs], [p[1] for p in pairs]
            if len(items) >= min_length:
                kept.append((sid, items, times))
            else:
                changed = True
        sessions = kept
        if not changed:
            return sessions


def _resolve_split_time(sessions: list[RawSession], config: PreprocessConfig) -> float:
    starts = sorted(times[0] for _, _, times in sessions)
    if config.split_time is not None:
        return float(config.split_time)
    if config.test_days is not None:
        return starts[-1] - config.test_days * SECONDS_PER_DAY
    n_test = max(1, math.ceil(config.test_fraction * len(starts)))
    if n_test >= len(starts):
        raise DegenerateDatasetError("test_fraction leaves no training sessions")
    # sessions starting strictly after the last training start are test
    return starts[len(starts) - n_test - 1]


def preprocess(events: Sequence[InteractionEvent], config: PreprocessConfig = PreprocessConfig()) -> Dataset:
    """Filter rare items and short sessions to a fixed point, then split by session start time.

    Training support counts and filtering are recomputed on the training
    partition alone; test sessions lose items unseen in training and are
    dropped if they become too short.
    """
    if not events:
        raise InvalidInputError("no events to preprocess")
    sessions = filter_sessions(
        _group_sessions(events), config.min_item_support, config.min_session_length
    )
    if not sessions:
        raise DegenerateDatasetError("no sessions survive item/session filtering")

    split_time = _resolve_split_time(sessions, config)
    train_raw = [s for s in sessions if s[2][0] <= split_time]
    test_raw = [s for s in sessions if s[2][0] > split_time]
    train_raw = filter_sessions(train_raw, config.min_item_support, config.min_session_length)
    if not train_raw:
        raise DegenerateDatasetError("training partition is empty after filtering")

    vocab = Vocabulary(item for _, items, _ in train_raw for item in items)
    test_kept = []
    for sid, items, times in test_raw:
        pairs = [(i, t) for i, t in zip(items, times) if i in vocab]
        if len(pairs) >= config.min_session_length:
            test_kept.append((sid, [p[0] for p in pairs], [p[1] for p in pairs]))
    if not test_kept:
        raise DegenerateDatasetError("test partition is empty after filtering")

    def build(raw: list[RawSession]) -> tuple[Session, ...]:
        out = [Session(sid, tuple(vocab.index(i) for i in items), tuple(times)) for sid, items, times in raw]
        out.sort(key=lambda s: (s.start_time, s.session_id))
        return tuple(out)

    train = build(train_raw)
    counts = np.zeros(len(vocab), dtype=np.int64)
    for s in train:
        np.add.at(counts, list(s.items), 1)

    meta = {
        "preprocess": asdict(config),
        "split_time": split_time,
        "n_input_events": len(events),
    }
    return Dataset(train, build(test_kept), vocab, counts, meta)


def dataset_events(dataset: Dataset) -> list[InteractionEvent]:
    """Flatten a dataset back into events (train first, then test)."""
    vocab = dataset.vocabulary
    return [
        InteractionEvent(s.session_id, vocab.item_id(i), t)
        for s in dataset.train_sessions + dataset.test_sessions
        for i, t in zip(s.items, s.timestamps)
    ]


def summary_stats(dataset: Dataset) -> dict:
    """Actions, sessions, items and average session length over both partitions."""
    sessions = dataset.train_sessions + dataset.test_sessions
    n_events = sum(len(s) for s in sessions)
    return {
        "actions": n_events,
        "sessions": len(sessions),
        "items": dataset.n_items,
        "avg_session_length": n_events / len(sessions),
        "train_sessions": len(dataset.train_sessions),
        "test_sessions": len(dataset.test_sessions),
        "test_actions": sum(len(s) - 1 for s in dataset.test_sessions),
    }


# -- snapshot ---------------------------------------------------------------

SNAPSHOT_EVENTS = "events.tsv"
SNAPSHOT_ITEMS = "items.tsv"
SNAPSHOT_META = "meta.json"


def save_snapshot(dataset: Dataset, directory: str | Path) -> None:
    """Write ``events.tsv`` (session_id, item_index, timestamp, partition), ``items.tsv`` and ``meta.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / SNAPSHOT_EVENTS, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("session_id\titem_index\ttimestamp\tpartition\n")
        for partition, sessions in (("train", dataset.train_sessions), ("test", dataset.test_sessions)):
            for s in sessions:
                for i, t in zip(s.items, s.timestamps):
                    fh.write(f"{s.session_id}\t{i}\t{t!r}\t{partition}\n")
    with open(directory / SNAPSHOT_ITEMS, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("item_index\titem_id\ttrain_count\n")
        for idx, (item_id, count) in enumerate(zip(dataset.vocabulary.ids, dataset.item_counts)):
            fh.write(f"{idx}\t{item_id}\t{int(count)}\n")
    with open(directory / SNAPSHOT_META, "w", encoding="utf-8") as fh:
        json.dump(dataset.meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_snapshot(directory: str | Path) -> Dataset:
    directory = Path(directory)
    with open(directory / SNAPSHOT_ITEMS, encoding="utf-8") as fh:
        next(fh)
        rows = [line.rstrip("\n").split("\t") for line in fh]
    vocab = Vocabulary(r[1] for r in rows)
    if list(vocab.ids) != [r[1] for r in rows]:
        raise ParseError(f"{directory / SNAPSHOT_ITEMS}: item ids not in ascending index order")
    counts = np.array([int(r[2]) for r in rows], dtype=np.int64)

    parts: dict[str, dict[str, tuple[list[int], list[float]]]] = {"train": {}, "test": {}}
    with open(directory / SNAPSHOT_EVENTS, encoding="utf-8") as fh:
        next(fh)
        for line_no, line in enumerate(fh, start=2):
            sid, idx, ts, partition = line.rstrip("\n").split("\t")
            if partition not in parts:
                raise ParseError(f"unknown partition {partition!r}", line_no)
            items, times = parts[partition].setdefault(sid, ([], []))
            items.append(int(idx))
            times.append(float(ts))
    meta_path = directory / SNAPSHOT_META
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}

    def build(p: dict[str, tuple[list[int], list[float]]]) -> tuple[Session, ...]:
        return tuple(Session(sid, tuple(items), tuple(times)) for sid, (items, times) in p.items())

    return Dataset(build(parts["train"]), build(parts["test"]), vocab, counts, meta)


def preprocess_config_with_resolved_split(dataset: Dataset) -> PreprocessConfig:
    """The config that reproduces ``dataset`` exactly when re-run on its own events."""
    base = dataset.meta["preprocess"]
    return PreprocessConfig(
        min_item_support=base["min_item_support"],
        min_session_length=base["min_session_length"],
        split_time=dataset.meta["split_time"],
    )
