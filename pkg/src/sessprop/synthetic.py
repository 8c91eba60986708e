"""Seeded synthetic session logs with Zipf item popularity.

Each next item either follows a fixed per-item successor (so sequence models
have something to learn) or is a fresh Zipf draw. Used by the test suite and
for desk-scale demos::

    python -m sessprop.synthetic out.tsv --sessions 2000 --items 300
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .core import InteractionEvent


def zipf_probabilities(n_items: int, exponent: float) -> np.ndarray:
    p = 1.0 / np.arange(1, n_items + 1, dtype=np.float64) ** exponent
    return p / p.sum()


def zipf_counts(n_items: int, n_draws: int, exponent: float, seed: int) -> np.ndarray:
    """Item counts from ``n_draws`` draws of a bounded Zipf law over ``n_items`` ranks."""
    rng = np.random.default_rng(seed)
    draws = rng.choice(n_items, size=n_draws, p=zipf_probabilities(n_items, exponent))
    return np.bincount(draws, minlength=n_items)


def generate_events(n_sessions: int = 200, n_items: int = 50, exponent: float = 1.0, seed: int = 0,
                    follow_prob: float = 0.5, mean_length: float = 4.0, days: int = 10) -> list[InteractionEvent]:
    rng = np.random.default_rng(seed)
    p = zipf_probabilities(n_items, exponent)
    successor = rng.permutation(n_items)
    starts = np.sort(rng.uniform(0, days * 86400.0, size=n_sessions)) + 1_600_000_000.0
    events = []
    for s in range(n_sessions):
        length = 2 + rng.geometric(1.0 / max(mean_length - 1.0, 1.0)) - 1
        item = int(rng.choice(n_items, p=p))
        t = float(np.floor(starts[s]))
        for _ in range(length):
            events.append(InteractionEvent(f"s{s:05d}", f"i{item:04d}", t))
            t += float(rng.integers(5, 120))
            item = int(successor[item]) if rng.random() < follow_prob else int(rng.choice(n_items, p=p))
    return events


def write_events(events: list[InteractionEvent], path: str | Path, delimiter: str = "\t") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(delimiter.join(["SessionId", "ItemId", "Time"]) + "\n")
        for ev in events:
            ts = int(ev.timestamp) if float(ev.timestamp).is_integer() else ev.timestamp
            fh.write(delimiter.join([ev.session_id, ev.item_id, str(ts)]) + "\n")


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description="write a synthetic session log (session-rec layout)")
    parser.add_argument("path")
    parser.add_argument("--sessions", type=int, default=2000)
    parser.add_argument("--items", type=int, default=300)
    parser.add_argument("--exponent", type=float, default=1.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--days", type=int, default=10)
    args = parser.parse_args(argv)
    events = generate_events(args.sessions, args.items, args.exponent, args.seed, days=args.days)
    write_events(events, args.path)


if __name__ == "__main__":
    main()
