from pathlib import Path

import numpy as np
import pytest

from pathcast.events import PostingInstance, chronological_split, ingest_events

DATA = Path(__file__).parent / "data"
TINY = DATA / "tiny.jsonl"


def ev(video, community, user, t, channel=None):
    return PostingInstance(video, community, user, t, None, channel)


@pytest.fixture
def tiny_path():
    return TINY


@pytest.fixture
def tiny_corpus():
    return ingest_events(TINY)


@pytest.fixture
def tiny_split(tiny_corpus):
    return chronological_split(tiny_corpus)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
