"""Loss terms, negative sampling, and the chronological training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import NumericError, Tensor
from .config import TrainConfig
from .events import Corpus, Split
from .params import adam_step

log = logging.getLogger(__name__)


def sample_negative(observed, n_communities: int, rng: np.random.Generator) -> int:
    """Uniform draw from the communities not in ``observed``."""
    if len(observed) >= n_communities:
        raise ValueError("no unobserved community left to sample")
    # rejection is cheap while the observed set is a small fraction
    if len(observed) * 2 <= n_communities:
        while True:
            c = int(rng.integers(n_communities))
            if c not in observed:
                return c
    free = np.setdiff1d(np.arange(n_communities), np.fromiter(observed, dtype=np.int64))
    return int(free[rng.integers(len(free))])


def bpr_loss(pos_score, neg_score) -> Tensor:
    """-ln sigmoid(pos - neg) summed over pairs, computed as softplus(neg - pos)."""
    return ag.sum(ag.softplus(ag.sub(neg_score, pos_score)))


def ce_loss(probs, target: int) -> Tensor:
    probs = ag.as_tensor(probs)
    if not 0 <= target < probs.shape[-1]:
        raise IndexError(f"target {target} out of range for {probs.shape[-1]} communities")
    return ag.mul(ag.log(probs[target]), -1.0)


def total_loss(bpr, ce_terms, params, lambda1: float = 1.0, lambda2: float = 1e-3) -> Tensor:
    """bpr + lambda1 * sum(ce) + lambda2 * sum of squared parameters."""
    loss = ag.as_tensor(bpr)
    for ce in ce_terms:
        loss = ag.add(loss, ag.mul(ce, lambda1))
    if lambda2:
        loss = ag.add(loss, ag.mul(params.l2(), lambda2))
    return loss


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_ndcg5: float
    val_mrr: float
    wall_ms: float


@dataclass
class TrainResult:
    model: object
    state: object
    history: list[EpochLog] = field(default_factory=list)


def batches(positions: np.ndarray, size: int):
    for lo in range(0, len(positions), size):
        yield positions[lo : lo + size]


def check_no_leakage(corpus: Corpus, split: Split) -> None:
    if len(split.train) and len(split.validation):
        max_train = corpus.timestamp[split.train.stop - 1]
        min_val = corpus.timestamp[split.validation.start]
        if max_train > min_val:
            raise AssertionError("training events must not be later than validation events")


def train(
    corpus: Corpus,
    split: Split,
    config: TrainConfig,
    on_epoch: Callable[[EpochLog], None] | None = None,
    validate: bool = True,
) -> TrainResult:
    """Train from scratch on the train split; validation NDCG@5/MRR are logged per epoch.

    Memory is reset at the start of every epoch. Only train events ever
    reach the optimizer or the memory during the epoch itself.
    """
    from .evaluator import stream_evaluate
    from .model import PathwayModel

    config = config.validate()
    check_no_leakage(corpus, split)
    model = PathwayModel(corpus, split, config)
    rng = np.random.default_rng(config.seed + 1)
    train_pos = np.asarray(split.train, dtype=np.int64)
    val_pos = np.asarray(split.validation, dtype=np.int64)
    result = TrainResult(model, model.new_state())
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        state = model.new_state()
        total = 0.0
        for batch in batches(train_pos, config.batch_size):
            negs = model.sample_negatives(batch, rng)
            loss, parts, update = model.batch_loss(state, batch, negs)
            if not np.isfinite(loss.item()):
                raise NumericError(f"non-finite loss at epoch {epoch}: {parts}")
            ag.backward(loss)
            adam_step(model.params, lr=config.lr)
            model._commit(state, update, batch)
            total += loss.item()
        model.flush(state)
        result.state = state
        ndcg5 = mrr = float("nan")
        if validate and len(val_pos):
            val_state = state.copy()
            report = stream_evaluate(model, val_state, val_pos, seeds=[config.seed], ks=(5,))
            ndcg5, mrr = report["ndcg@5"], report["mrr"]
        entry = EpochLog(epoch, total / max(len(train_pos), 1), ndcg5, mrr, (time.perf_counter() - t0) * 1e3)
        result.history.append(entry)
        log.info("epoch %d loss %.4f val ndcg@5 %.4f mrr %.4f", epoch, entry.train_loss, ndcg5, mrr)
        if on_epoch:
            on_epoch(entry)
    return result


def tune(corpus: Corpus, split: Split, config: TrainConfig, on_trial=None) -> tuple[float, dict[float, float]]:
    """Train once per learning rate in the grid; pick the best final validation MRR."""
    scores = {}
    for lr in config.lr_grid:
        res = train(corpus, split, config.replace(lr=lr))
        mrr = res.history[-1].val_mrr if res.history else float("nan")
        scores[lr] = mrr
        if on_trial:
            on_trial(lr, mrr)
    best = max(scores, key=lambda k: -np.inf if np.isnan(scores[k]) else scores[k])
    return best, scores
