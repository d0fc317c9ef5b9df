import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathcast.config import TrainConfig
from pathcast.evaluator import (
    ConstantScorer,
    RandomScorer,
    TrialBuilder,
    evaluate,
    expected_random_metrics,
    metric_vector,
    mrr,
    ndcg_at_k,
    rank_candidates,
    recall_at_k,
)
from pathcast.events import Corpus, Split
from pathcast.trainer import train

from conftest import ev


def test_rank_examples():
    negs = np.linspace(0, 1, 100)
    assert rank_candidates(2.0, negs) == 1
    assert rank_candidates(-1.0, negs) == 101
    assert rank_candidates(0.5, np.array([0.5, 0.1, 0.2])) == 2


def test_metric_examples():
    assert ndcg_at_k(1, 5) == 1.0
    assert ndcg_at_k(3, 5) == 0.5
    assert ndcg_at_k(7, 5) == 0.0
    assert recall_at_k(2, 5) == 1.0 and recall_at_k(6, 5) == 0.0
    assert mrr([1, 2, 4]) == pytest.approx(0.583333, abs=1e-6)
    assert mrr([101]) == pytest.approx(0.0099, abs=1e-4)
    with pytest.raises(ValueError):
        mrr([])
    with pytest.raises(ValueError):
        ndcg_at_k(0, 5)


def test_expected_random_closed_form():
    e5, e10 = expected_random_metrics(101, 5), expected_random_metrics(101, 10)
    assert e10["recall@10"] == pytest.approx(10 / 101)
    assert e5["ndcg@5"] == pytest.approx(0.0292, abs=1e-4)


def test_random_scores_match_expectation_by_simulation():
    r = np.random.default_rng(0)
    n = 20_000
    ranks = np.array([rank_candidates(r.random(), r.random(100)) for _ in range(n)])
    got = metric_vector(ranks, (5, 10))
    exp = {**expected_random_metrics(101, 5), **expected_random_metrics(101, 10)}
    for key in ("ndcg@5", "recall@10", "mrr"):
        se = np.std(np.where(ranks <= 10, 1.0, 0.0)) / math.sqrt(n) if key == "recall@10" else 0.003
        assert abs(got[key] - exp[key]) < 4 * max(se, 1e-3)


def dcg_reference(scores, pos, k):
    # positive sorts after equal negatives
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i == pos))
    rel = [1.0 if i == pos else 0.0 for i in order]
    return sum(rel[i] / math.log2(i + 2) for i in range(min(k, len(rel))))


def test_metrics_match_brute_force_reference():
    r = np.random.default_rng(1)
    for _ in range(1000):
        scores = r.permutation(101).astype(float) if r.random() < 0.7 else r.integers(0, 20, 101).astype(float)
        pos = int(r.integers(101))
        rank = rank_candidates(scores[pos], np.delete(scores, pos))
        for k in (5, 10):
            assert ndcg_at_k(rank, k) == dcg_reference(scores, pos, k)
            assert recall_at_k(rank, k) == float(dcg_reference(scores, pos, k) > 0)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(1, 101), min_size=1, max_size=50))
def test_metric_bounds_and_nesting(ranks):
    for r in ranks:
        assert 0 <= ndcg_at_k(r, 5) <= ndcg_at_k(r, 10) <= 1
        assert recall_at_k(r, 5) <= recall_at_k(r, 10)
    assert 0 < mrr(ranks) <= 1


def hand_corpus():
    events = [
        ev("v1", "A", "u1", 0),
        ev("v1", "B", "u2", 1),
        ev("v2", "A", "u3", 2),
        ev("v3", "C", "u1", 3),
        ev("v1", "C", "u2", 4),
        ev("v2", "D", "u4", 5),
        ev("v3", "C", "u2", 6),
        ev("v4", "A", "u1", 7),
        ev("v3", "A", "u5", 8),
    ]
    return Corpus(events), Split(range(0, 4), range(4, 4), range(4, 9))


def test_slices_and_skips_on_hand_corpus():
    corpus, split = hand_corpus()
    rep = evaluate(None, corpus, split, seeds=(0, 1), scorer=ConstantScorer())
    assert rep.skipped == {"no_train_postings": 1, "seen_in_train": 1, "no_negatives": 0}
    assert rep.counts["all"] == 3 and rep.counts["warm"] == 1 and rep.counts["cold"] == 2
    assert rep.counts["popular"] == 1 and rep.counts["cold/popular"] == 1
    # constant scores put each positive below all of its negatives
    assert rep["mrr"] == pytest.approx((1 / 2 + 1 / 3 + 1 / 3) / 3)
    assert rep.metrics["warm"]["mrr"] == (0.5, 0.0)


def test_negatives_never_interacted():
    corpus, split = hand_corpus()
    b = TrialBuilder(corpus, split)
    C = corpus.community_index
    assert b.negatives(4, 0).tolist() == [C["D"]]
    assert sorted(b.negatives(5, 3).tolist()) == sorted([C["B"], C["C"]])
    assert b.negatives(5, 3).tolist() == b.negatives(5, 3).tolist()


def wide_corpus(n_comm=150, n_videos=30):
    events = [ev("filler", f"c{j:03d}", "u0", j) for j in range(n_comm)]
    t = n_comm
    for v in range(n_videos):
        events.append(ev(f"v{v}", f"c{v:03d}", "u1", t))
        t += 1
    n_train = len(events)
    for v in range(n_videos):
        events.append(ev(f"v{v}", f"c{v + 1:03d}", "u2", t))
        t += 1
    return Corpus(events), Split(range(0, n_train), range(n_train, n_train), range(n_train, len(events)))


def test_constant_scorer_mrr_is_one_over_101():
    corpus, split = wide_corpus()
    rep = evaluate(None, corpus, split, seeds=(0,), scorer=ConstantScorer())
    assert rep.counts["all"] == 30
    assert rep["mrr"] == pytest.approx(1 / 101)


class OracleScorer(ConstantScorer):
    def __init__(self, corpus):
        super().__init__()
        self.corpus = corpus

    def score(self, state, positions, candidates):
        return [(c == self.corpus.community[p]).astype(float) for p, c in zip(positions, candidates)]


def test_perfect_oracle_scores_one():
    corpus, split = wide_corpus()
    rep = evaluate(None, corpus, split, seeds=(0, 1, 2), scorer=OracleScorer(corpus))
    assert all(mu == 1.0 and sd == 0.0 for mu, sd in rep.metrics["all"].values())


def test_random_scorer_is_in_unit_range():
    corpus, split = wide_corpus()
    rep = evaluate(None, corpus, split, seeds=(0, 1), scorer=RandomScorer(3))
    for ms in rep.metrics.values():
        assert all(0.0 <= mu <= 1.0 for mu, _ in ms.values())


def test_evaluation_leaves_parameters_untouched(tiny_corpus, tiny_split):
    res = train(tiny_corpus, tiny_split, TrainConfig(dim=8, batch_size=8, epochs=1))
    before = res.model.params.checksum()
    a = evaluate(res.model, tiny_corpus, tiny_split, seeds=(0, 1))
    assert res.model.params.checksum() == before
    b = evaluate(res.model, tiny_corpus, tiny_split, seeds=(0, 1))
    assert a.to_dict() == b.to_dict()
