"""Sampled-candidate ranking evaluation with warm/cold and popular/non-popular slices."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .events import Corpus, Split

# ---------------------------------------------------------------- metrics


def rank_candidates(pos_score: float, neg_scores: np.ndarray) -> int:
    """1-based rank of the positive; ties with negatives count against it."""
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    return 1 + int(np.count_nonzero(neg_scores >= pos_score))


def ndcg_at_k(rank: int, k: int) -> float:
    if rank < 1:
        raise ValueError("rank must be >= 1")
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def recall_at_k(rank: int, k: int) -> float:
    if rank < 1:
        raise ValueError("rank must be >= 1")
    return 1.0 if rank <= k else 0.0


def mrr(ranks: Sequence[int]) -> float:
    if len(ranks) == 0:
        raise ValueError("mrr of an empty rank list")
    return float(np.mean(1.0 / np.asarray(ranks, dtype=np.float64)))


def expected_random_metrics(n_candidates: int, k: int) -> dict[str, float]:
    """Closed-form metric expectations when the positive's rank is uniform on 1..n."""
    top = range(1, min(k, n_candidates) + 1)
    return {
        f"ndcg@{k}": sum(1.0 / math.log2(r + 1) for r in top) / n_candidates,
        f"recall@{k}": min(k, n_candidates) / n_candidates,
        "mrr": sum(1.0 / r for r in range(1, n_candidates + 1)) / n_candidates,
    }


def metric_vector(ranks: np.ndarray, ks: Iterable[int]) -> dict[str, float]:
    ranks = np.asarray(ranks, dtype=np.float64)
    out = {}
    for k in ks:
        out[f"ndcg@{k}"] = float(np.mean(np.where(ranks <= k, 1.0 / np.log2(ranks + 1), 0.0)))
        out[f"recall@{k}"] = float(np.mean(ranks <= k))
    out["mrr"] = float(np.mean(1.0 / ranks))
    return out


# ---------------------------------------------------------------- trials


@dataclass
class RankedTrial:
    position: int
    video: int
    timestamp: int
    positive: int
    negatives: np.ndarray
    rank: int = 0
    warm: bool = True
    popular: bool = False


class TrialBuilder:
    """Everything needed to turn held-out events into ranked trials."""

    def __init__(self, corpus: Corpus, split: Split, n_negatives: int = 100):
        self.corpus = corpus
        self.n_negatives = n_negatives
        S = corpus.n_communities
        train = np.asarray(split.train, dtype=np.int64)
        self.train_count = np.bincount(corpus.video[train], minlength=corpus.n_videos)
        self.train_pairs = set(zip(corpus.video[train].tolist(), corpus.community[train].tolist()))
        self.interacted: dict[int, np.ndarray] = {}
        for v, c in zip(corpus.video.tolist(), corpus.community.tolist()):
            self.interacted.setdefault(v, set()).add(c)
        self.interacted = {v: np.array(sorted(cs), dtype=np.int64) for v, cs in self.interacted.items()}
        counts = np.bincount(corpus.community[train], minlength=S)
        n_pop = int(math.ceil(0.25 * S))
        order = sorted(range(S), key=lambda c: (-counts[c], c))
        self.popular = np.zeros(S, dtype=bool)
        self.popular[order[:n_pop]] = True
        self.skipped = {"no_train_postings": 0, "seen_in_train": 0, "no_negatives": 0}

    def eligible(self, p: int) -> bool:
        v, c = int(self.corpus.video[p]), int(self.corpus.community[p])
        if self.train_count[v] == 0:
            self.skipped["no_train_postings"] += 1
            return False
        if (v, c) in self.train_pairs:
            self.skipped["seen_in_train"] += 1
            return False
        if len(self.interacted[v]) >= self.corpus.n_communities:
            self.skipped["no_negatives"] += 1
            return False
        return True

    def negatives(self, p: int, seed: int) -> np.ndarray:
        v = int(self.corpus.video[p])
        pool = np.setdiff1d(np.arange(self.corpus.n_communities), self.interacted[v], assume_unique=True)
        rng = np.random.default_rng([seed, p])
        k = min(self.n_negatives, len(pool))
        return np.sort(rng.choice(pool, size=k, replace=False))

    def trial(self, p: int, seed: int) -> RankedTrial:
        c = self.corpus
        v, pos = int(c.video[p]), int(c.community[p])
        return RankedTrial(
            position=p,
            video=v,
            timestamp=int(c.timestamp[p]),
            positive=pos,
            negatives=self.negatives(p, seed),
            warm=bool(self.train_count[v] >= 2),
            popular=bool(self.popular[pos]),
        )


# ---------------------------------------------------------------- scorers


class ModelScorer:
    def __init__(self, model):
        self.model = model

    def new_state(self):
        return self.model.new_state()

    def observe(self, state, positions):
        self.model.observe(state, positions)

    def flush(self, state):
        self.model.flush(state)

    def score(self, state, positions, candidates):
        return self.model.score_candidates(state, positions, candidates)

    def finish(self, state, positions):
        self.model.finish_batch(state, positions)


class RandomScorer:
    """Scores every candidate with an independent uniform draw."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def new_state(self):
        return None

    def observe(self, state, positions):
        pass

    def flush(self, state):
        pass

    def score(self, state, positions, candidates):
        return [self.rng.random(len(c)) for c in candidates]

    def finish(self, state, positions):
        pass


class ConstantScorer(RandomScorer):
    def score(self, state, positions, candidates):
        return [np.zeros(len(c)) for c in candidates]


# ---------------------------------------------------------------- reports

SLICES = (
    "all",
    "warm",
    "cold",
    "popular",
    "nonpopular",
    "warm/popular",
    "warm/nonpopular",
    "cold/popular",
    "cold/nonpopular",
)


def _slices_of(trial: RankedTrial) -> list[str]:
    w = "warm" if trial.warm else "cold"
    p = "popular" if trial.popular else "nonpopular"
    return ["all", w, p, f"{w}/{p}"]


@dataclass
class EvalReport:
    ks: tuple[int, ...]
    seeds: tuple[int, ...]
    # slice -> metric -> (mean, std) across seeds
    metrics: dict[str, dict[str, tuple[float, float]]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)
    ranks: dict[int, list[int]] = field(default_factory=dict)

    def __getitem__(self, metric: str) -> float:
        """Mean over seeds of ``metric`` on the full slice (nan when there are no trials)."""
        return self.metrics.get("all", {}).get(metric, (float("nan"), float("nan")))[0]

    def to_dict(self) -> dict:
        return {
            "ks": list(self.ks),
            "seeds": list(self.seeds),
            "metrics": {
                s: {m: {"mean": mu, "std": sd} for m, (mu, sd) in ms.items()} for s, ms in self.metrics.items()
            },
            "counts": dict(self.counts),
            "skipped": dict(self.skipped),
        }

    def rows(self) -> list[tuple[str, str, float, float]]:
        return [(s, m, mu, sd) for s, ms in self.metrics.items() for m, (mu, sd) in ms.items()]


def stream_evaluate(
    model_or_scorer,
    state,
    positions: np.ndarray,
    seeds: Sequence[int] = (0,),
    ks: Sequence[int] = (5, 10),
    builder: TrialBuilder | None = None,
    batch_size: int | None = None,
) -> EvalReport:
    """Rank held-out events in chronological batches.

    Each batch is scored with the state from before the batch and is then
    fed into the state, so later batches see earlier held-out events.
    """
    scorer = model_or_scorer if hasattr(model_or_scorer, "finish") else ModelScorer(model_or_scorer)
    if builder is None:
        m = scorer.model
        builder = TrialBuilder(m.corpus, m.split, m.cfg.n_negatives)
    if batch_size is None:
        batch_size = scorer.model.cfg.batch_size if hasattr(scorer, "model") else 256
    seeds = tuple(seeds)
    per_seed: dict[int, list[RankedTrial]] = {s: [] for s in seeds}
    positions = np.asarray(positions, dtype=np.int64)
    for lo in range(0, len(positions), batch_size):
        batch = positions[lo : lo + batch_size]
        ok = [int(p) for p in batch.tolist() if builder.eligible(int(p))]
        trials = {s: [builder.trial(p, s) for p in ok] for s in seeds}
        cand_lists, lookup = [], []
        for i, p in enumerate(ok):
            union = np.unique(np.concatenate([[trials[s][i].positive] for s in seeds] + [trials[s][i].negatives for s in seeds]))
            cand_lists.append(union)
            lookup.append({int(c): j for j, c in enumerate(union.tolist())})
        if not ok:
            scorer.observe(state, batch)
            continue
        scores = scorer.score(state, np.asarray(ok, dtype=np.int64), cand_lists)
        for s in seeds:
            for i, tr in enumerate(trials[s]):
                sc, lk = scores[i], lookup[i]
                pos_score = sc[lk[tr.positive]]
                neg_scores = sc[[lk[int(c)] for c in tr.negatives]]
                tr.rank = rank_candidates(pos_score, neg_scores)
                per_seed[s].append(tr)
        scorer.finish(state, batch)
    return summarize(per_seed, ks, builder.skipped)


def summarize(per_seed: dict[int, list[RankedTrial]], ks: Sequence[int], skipped: dict | None = None) -> EvalReport:
    seeds = tuple(per_seed)
    report = EvalReport(tuple(ks), seeds, skipped=dict(skipped or {}))
    for sl in SLICES:
        vals: dict[str, list[float]] = {}
        count = 0
        for s in seeds:
            ranks = [t.rank for t in per_seed[s] if sl in _slices_of(t)]
            count = len(ranks)
            if not ranks:
                continue
            for name, v in metric_vector(np.asarray(ranks), ks).items():
                vals.setdefault(name, []).append(v)
        report.counts[sl] = count
        if vals:
            report.metrics[sl] = {k: (float(np.mean(v)), float(np.std(v))) for k, v in vals.items()}
    report.ranks = {s: [t.rank for t in per_seed[s]] for s in seeds}
    return report


def evaluate(model, corpus: Corpus, split: Split, seeds: Sequence[int] = (0, 1, 2, 3, 4), ks: Sequence[int] = (5, 10), scorer=None) -> EvalReport:
    """Replay train and validation events into fresh memory, then stream the test split."""
    scorer = scorer or ModelScorer(model)
    batch_size = model.cfg.batch_size if model is not None else 256
    n_neg = model.cfg.n_negatives if model is not None else 100
    state = scorer.new_state()
    history = np.concatenate([np.asarray(split.train), np.asarray(split.validation)]).astype(np.int64)
    for lo in range(0, len(history), batch_size):
        scorer.observe(state, history[lo : lo + batch_size])
    scorer.flush(state)
    builder = TrialBuilder(corpus, split, n_neg)
    return stream_evaluate(scorer, state, np.asarray(split.test, dtype=np.int64), seeds, ks, builder, batch_size)
