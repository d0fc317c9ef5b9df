"""Posting-event store: loading, validation, dense indexing and chronological splits.

A corpus is immutable once built. Events are kept in chronological order
(timestamp, then input order) and every id gets a dense integer index in
order of first appearance in that ordering, so serializing a corpus and
loading it again reproduces the same indices.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class PostingInstance:
    video_id: str
    community_id: str
    user_id: str
    timestamp: int
    title: str | None = None
    channel_id: str | None = None

    def __post_init__(self):
        for name in ("video_id", "community_id", "user_id"):
            if not getattr(self, name):
                raise DataError(f"empty field: {name}")
        if self.timestamp < 0:
            raise DataError(f"negative timestamp: {self.timestamp}")

    @property
    def key(self) -> tuple[str, str, str, int]:
        return (self.video_id, self.community_id, self.user_id, self.timestamp)

    def to_dict(self) -> dict:
        d = {
            "video_id": self.video_id,
            "community_id": self.community_id,
            "user_id": self.user_id,
            "timestamp": self.timestamp,
        }
        if self.title is not None:
            d["title"] = self.title
        if self.channel_id is not None:
            d["channel_id"] = self.channel_id
        return d


class Index:
    """Bijection between string ids and dense integers 0..n-1."""

    def __init__(self, ids: Iterable[str] = ()):
        self._ids: list[str] = []
        self._pos: dict[str, int] = {}
        for i in ids:
            self.add(i)

    def add(self, key: str) -> int:
        pos = self._pos.get(key)
        if pos is None:
            pos = len(self._ids)
            self._ids.append(key)
            self._pos[key] = pos
        return pos

    def __getitem__(self, key: str) -> int:
        return self._pos[key]

    def __contains__(self, key: str) -> bool:
        return key in self._pos

    def __len__(self) -> int:
        return len(self._ids)

    def __iter__(self):
        return iter(self._ids)

    def id(self, pos: int) -> str:
        return self._ids[pos]

    @property
    def ids(self) -> list[str]:
        return list(self._ids)


class Corpus:
    """Chronologically ordered, deduplicated posting events with dense indices.

    Besides the event tuple, the corpus exposes parallel numpy arrays
    (``video``, ``community``, ``user``, ``timestamp``) aligned with
    ``events`` for vectorized consumers.
    """

    def __init__(self, events: Iterable[PostingInstance]):
        seen: set = set()
        unique = []
        for ev in events:
            if ev.key in seen:
                continue
            seen.add(ev.key)
            unique.append(ev)
        # stable sort keeps input order among equal timestamps
        unique.sort(key=lambda e: e.timestamp)
        self.events: tuple[PostingInstance, ...] = tuple(unique)

        self.video_index = Index()
        self.community_index = Index()
        self.user_index = Index()
        self.channel_of: dict[str, str] = {}
        for ev in self.events:
            self.video_index.add(ev.video_id)
            self.community_index.add(ev.community_id)
            self.user_index.add(ev.user_id)
            if ev.channel_id is not None:
                self.channel_of.setdefault(ev.video_id, ev.channel_id)

        n = len(self.events)
        self.video = np.fromiter((self.video_index[e.video_id] for e in self.events), dtype=np.int64, count=n)
        self.community = np.fromiter(
            (self.community_index[e.community_id] for e in self.events), dtype=np.int64, count=n
        )
        self.user = np.fromiter((self.user_index[e.user_id] for e in self.events), dtype=np.int64, count=n)
        self.timestamp = np.fromiter((e.timestamp for e in self.events), dtype=np.int64, count=n)

        self.sequences: dict[str, list[int]] = {}
        for pos, ev in enumerate(self.events):
            self.sequences.setdefault(ev.video_id, []).append(pos)

    def __len__(self) -> int:
        return len(self.events)

    @property
    def n_videos(self) -> int:
        return len(self.video_index)

    @property
    def n_communities(self) -> int:
        return len(self.community_index)

    @property
    def n_users(self) -> int:
        return len(self.user_index)

    def subset(self, positions: Sequence[int]) -> list[PostingInstance]:
        return [self.events[p] for p in positions]

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for ev in self.events:
                fh.write(json.dumps(ev.to_dict(), sort_keys=True) + "\n")

    def filter_min_communities(self, k: int) -> "Corpus":
        """Keep only videos posted in at least ``k`` distinct communities."""
        keep = {
            vid
            for vid, seq in self.sequences.items()
            if len({self.events[p].community_id for p in seq}) >= k
        }
        return Corpus(e for e in self.events if e.video_id in keep)


@dataclass(frozen=True)
class Split:
    """Chronological partition as half-open position ranges into ``Corpus.events``."""

    train: range
    validation: range
    test: range
    boundary_times: tuple[int, int] = field(default=(0, 0))

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (len(self.train), len(self.validation), len(self.test))


def _record_from_mapping(rec: dict, where: str) -> PostingInstance:
    try:
        ts_raw = rec["timestamp"]
        if isinstance(ts_raw, bool):
            raise ValueError("boolean timestamp")
        if isinstance(ts_raw, float):
            if not math.isfinite(ts_raw) or ts_raw != int(ts_raw):
                raise ValueError(f"non-integer timestamp {ts_raw!r}")
        ts = int(ts_raw)
        title = rec.get("title") or None
        channel = rec.get("channel_id") or None
        return PostingInstance(
            video_id=str(rec["video_id"]).strip(),
            community_id=str(rec["community_id"]).strip(),
            user_id=str(rec["user_id"]).strip(),
            timestamp=ts,
            title=title,
            channel_id=channel,
        )
    except KeyError as exc:
        raise DataError(f"{where}: missing field {exc.args[0]}") from None
    except (TypeError, ValueError) as exc:
        raise DataError(f"{where}: {exc}") from None


def read_records(path: str | Path, fmt: str = "jsonl") -> list[PostingInstance]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    records = []
    if fmt == "jsonl":
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from None
                if not isinstance(rec, dict):
                    raise DataError(f"line {lineno}: expected an object")
                records.append(_record_from_mapping(rec, f"line {lineno}"))
    elif fmt == "csv":
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                return []
            missing = {"video_id", "community_id", "user_id", "timestamp"} - set(reader.fieldnames)
            if missing:
                raise DataError(f"line 1: header missing columns {sorted(missing)}")
            for rec in reader:
                # header is line 1
                records.append(_record_from_mapping(rec, f"line {reader.line_num}"))
    else:
        raise DataError(f"unknown format: {fmt}")
    return records


def ingest_events(path: str | Path, fmt: str | None = None) -> Corpus:
    """Load a JSON-lines or CSV event log into a :class:`Corpus`.

    ``fmt`` defaults to the file suffix. Exact duplicate 4-tuples are
    collapsed; malformed records raise :class:`DataError` naming the line.
    """
    if fmt is None:
        fmt = "csv" if str(path).endswith(".csv") else "jsonl"
    return Corpus(read_records(path, fmt))


def chronological_split(corpus: Corpus, ratios: Sequence[float] = (0.7, 0.15, 0.15)) -> Split:
    if len(corpus) == 0:
        raise DataError("cannot split an empty corpus")
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive fractions summing to 1, got {ratios}")
    n = len(corpus)
    # tolerance guards against 0.7 * 10 = 6.999... style float error
    a = int(math.floor(ratios[0] * n + 1e-9))
    b = int(math.floor((ratios[0] + ratios[1]) * n + 1e-9))
    ts = corpus.timestamp
    bounds = (int(ts[a]) if a < n else int(ts[-1]), int(ts[b]) if b < n else int(ts[-1]))
    return Split(range(0, a), range(a, b), range(b, n), bounds)


def posting_sequence(corpus: Corpus, video_id: str, until: int | None = None) -> list[PostingInstance]:
    """Chronological postings of one video, restricted to ``timestamp < until``."""
    try:
        positions = corpus.sequences[video_id]
    except KeyError:
        raise KeyError(f"unknown video: {video_id}") from None
    seq = [corpus.events[p] for p in positions]
    if until is not None:
        seq = [e for e in seq if e.timestamp < until]
    return seq
