import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathcast.events import (
    Corpus,
    DataError,
    PostingInstance,
    chronological_split,
    ingest_events,
    posting_sequence,
    read_records,
)

from conftest import ev


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def test_empty_file_gives_empty_corpus(tmp_path):
    c = ingest_events(write_jsonl(tmp_path / "e.jsonl", []))
    assert len(c) == 0 and c.n_videos == 0


def test_single_record(tmp_path):
    rec = {"video_id": "v1", "community_id": "sA", "user_id": "u1", "timestamp": 100}
    c = ingest_events(write_jsonl(tmp_path / "one.jsonl", [rec]))
    assert len(c) == 1
    assert [c.events[p] for p in c.sequences["v1"]] == [PostingInstance("v1", "sA", "u1", 100)]


def test_identical_records_collapse(tmp_path):
    rec = {"video_id": "v1", "community_id": "sA", "user_id": "u1", "timestamp": 100}
    c = ingest_events(write_jsonl(tmp_path / "dup.jsonl", [rec, rec]))
    assert len(c) == 1


def test_repost_at_other_time_is_kept():
    c = Corpus([ev("v", "A", "u", 1), ev("v", "A", "u", 2)])
    assert len(c) == 2


def test_csv_ingest_and_header_required(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("video_id,community_id,user_id,timestamp,channel_id\nv1,A,u1,5,ch\nv1,B,u2,3,ch\n")
    c = ingest_events(p)
    assert [e.timestamp for e in c.events] == [3, 5]
    assert c.channel_of == {"v1": "ch"}
    bad = tmp_path / "nohead.csv"
    bad.write_text("v1,A,u1,5\n")
    with pytest.raises(DataError):
        ingest_events(bad)


@pytest.mark.parametrize(
    "line",
    [
        '{"video_id": "", "community_id": "A", "user_id": "u", "timestamp": 1}',
        '{"video_id": "v", "community_id": "A", "user_id": "u", "timestamp": -4}',
        '{"video_id": "v", "community_id": "A", "user_id": "u"}',
        "not json at all",
    ],
)
def test_malformed_record_reports_line(tmp_path, line):
    ok = '{"video_id": "v", "community_id": "A", "user_id": "u", "timestamp": 1}'
    p = tmp_path / "bad.jsonl"
    p.write_text(ok + "\n" + line + "\n")
    with pytest.raises(DataError, match="line 2"):
        read_records(p, "jsonl")


def test_posting_instance_validation():
    with pytest.raises(DataError):
        PostingInstance("v", "c", "", 0)
    with pytest.raises(DataError):
        PostingInstance("v", "c", "u", -1)


@pytest.mark.parametrize("n,sizes", [(10, (7, 1, 2)), (100, (70, 15, 15))])
def test_split_sizes(n, sizes):
    c = Corpus(ev(f"v{i}", "A", "u", i) for i in range(n))
    assert chronological_split(c).sizes == sizes


def test_split_with_equal_timestamps_keeps_input_order():
    events = [ev(f"v{i}", "A", "u", 7) for i in range(10)]
    c = Corpus(events)
    s = chronological_split(c)
    assert [c.events[p].video_id for p in s.train] == [f"v{i}" for i in range(7)]
    assert s.sizes == (7, 1, 2)


def test_split_errors():
    with pytest.raises(DataError):
        chronological_split(Corpus([]))
    c = Corpus([ev("v", "A", "u", 1)])
    with pytest.raises(ValueError):
        chronological_split(c, (0.5, 0.5, 0.5))


def test_posting_sequence_until():
    c = Corpus([ev("v", "A", "u1", 1), ev("v", "B", "u2", 5), ev("v", "C", "u3", 9), ev("w", "A", "u1", 2)])
    assert [e.timestamp for e in posting_sequence(c, "v", until=6)] == [1, 5]
    assert posting_sequence(c, "v", until=0) == []
    assert [e.timestamp for e in posting_sequence(c, "v")] == [1, 5, 9]
    with pytest.raises(KeyError):
        posting_sequence(c, "nope")


def test_min_communities_filter():
    c = Corpus([ev("v", "A", "u", 1), ev("v", "B", "u", 2), ev("v", "C", "u", 3), ev("w", "A", "u", 4)])
    assert set(c.filter_min_communities(3).sequences) == {"v"}


def test_tiny_fixture_shape(tiny_corpus):
    assert (len(tiny_corpus), tiny_corpus.n_videos, tiny_corpus.n_communities, tiny_corpus.n_users) == (30, 5, 8, 4)


events_strategy = st.lists(
    st.tuples(
        st.sampled_from(["v1", "v2", "v3"]),
        st.sampled_from(["A", "B", "C", "D"]),
        st.sampled_from(["u1", "u2"]),
        st.integers(0, 50),
    ),
    max_size=40,
)


@settings(max_examples=60, deadline=None)
@given(events_strategy)
def test_corpus_invariants(rows):
    c = Corpus(PostingInstance(*r) for r in rows)
    assert sum(len(s) for s in c.sequences.values()) == len(c)
    for seq in c.sequences.values():
        ts = [c.events[p].timestamp for p in seq]
        assert ts == sorted(ts)
    for index in (c.video_index, c.community_index, c.user_index):
        assert sorted(index[k] for k in index) == list(range(len(index)))
    assert len(c) == len({r for r in rows})


@settings(max_examples=40, deadline=None)
@given(events_strategy)
def test_round_trip_preserves_indices(tmp_path_factory, rows):
    c = Corpus(PostingInstance(*r) for r in rows)
    path = tmp_path_factory.mktemp("rt") / "c.jsonl"
    c.to_jsonl(path)
    d = ingest_events(path)
    assert d.events == c.events
    assert d.video_index.ids == c.video_index.ids
    assert d.sequences == c.sequences
    assert np.array_equal(d.community, c.community)


@settings(max_examples=60, deadline=None)
@given(events_strategy.filter(lambda r: len(r) > 0))
def test_split_is_a_chronological_partition(rows):
    c = Corpus(PostingInstance(*r) for r in rows)
    s = chronological_split(c)
    parts = [set(s.train), set(s.validation), set(s.test)]
    assert set().union(*parts) == set(range(len(c)))
    assert sum(len(p) for p in parts) == len(c)
    ts = c.timestamp
    for a, b in ((s.train, s.validation), (s.validation, s.test)):
        if len(a) and len(b):
            assert ts[list(a)].max() <= ts[list(b)].min()
