"""The full next-community model: static influence graphs + temporal memory + scoring.

``PathwayModel`` owns the parameters and everything precomputed from the
training split (influence graphs, propagation operators, train prefixes).
``StreamState`` is the mutable memory/neighbor state replayed over events.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autograd as ag
from . import dynamic as dyn
from .autograd import Tensor
from .cig import Cig, build_cig, merge_weights
from .config import TrainConfig
from .events import Corpus, Split
from .intervals import diff_user_intervals, fit_log_gaussian, pool, threshold_seconds
from .params import ParamStore, load_arrays, save_arrays, xavier
from .static import (
    appnp_operator,
    build_content,
    head_logits,
    load_feature_file,
    session_attention_batch,
)

log = logging.getLogger(__name__)

FALLBACK_THRESHOLD = 3600.0


def corpus_fingerprint(corpus: Corpus) -> str:
    h = hashlib.sha256()
    for ev in corpus.events:
        h.update(f"{ev.video_id}\x1f{ev.community_id}\x1f{ev.user_id}\x1f{ev.timestamp}\n".encode())
    return h.hexdigest()


def fit_threshold(corpus: Corpus, positions, c: float) -> float:
    """Session cutoff fitted on different-user intervals of the given events."""
    by_video: dict[int, list] = {}
    for p in positions:
        by_video.setdefault(int(corpus.video[p]), []).append(corpus.events[p])
    sample = pool(diff_user_intervals(seq) for seq in by_video.values())
    if len(sample) < 2:
        log.warning("fewer than 2 different-user intervals; using %.0f s cutoff", FALLBACK_THRESHOLD)
        return FALLBACK_THRESHOLD
    return threshold_seconds(fit_log_gaussian(sample), c)


def build_train_cigs(corpus: Corpus, train_positions, threshold: float, mode: str, seed: int) -> dict[int, Cig]:
    by_video: dict[int, list] = {}
    for p in train_positions:
        by_video.setdefault(int(corpus.video[p]), []).append(corpus.events[p])
    return {
        v: merge_weights(build_cig(seq, threshold, mode, seed=seed, video_id=corpus.video_index.id(v)))
        for v, seq in sorted(by_video.items())
    }


@dataclass
class StreamState:
    bank: dyn.MemoryBank
    graph: dyn.TemporalGraph
    pending: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def copy(self) -> "StreamState":
        bank = dyn.MemoryBank(0, self.bank.h.shape[1])
        bank.h, bank.last_update, bank.seen = self.bank.h.copy(), self.bank.last_update.copy(), self.bank.seen.copy()
        graph = dyn.TemporalGraph(0)
        graph.nbrs = [list(x) for x in self.graph.nbrs]
        graph.times = [list(x) for x in self.graph.times]
        return StreamState(bank, graph, self.pending.copy())


@dataclass
class _Update:
    touched: np.ndarray
    new_h: Tensor
    last: np.ndarray


class _BatchContext:
    """Per-batch cache of raw features and memory rows overridden by a pending update."""

    def __init__(self, model: "PathwayModel", state: StreamState, update: _Update | None):
        self.model = model
        self.state = state
        self.update = update
        self._x_comm: Tensor | None = None
        self._override = None
        if update is not None:
            self._override = np.full(model.n_nodes, -1, dtype=np.int64)
            self._override[update.touched] = np.arange(len(update.touched))

    def x_comm(self) -> Tensor:
        if self._x_comm is None:
            self._x_comm = ag.spmm(self.model.q_matrix, self.model.params["community.table"])
        return self._x_comm

    def x_rows(self, ids: np.ndarray) -> Tensor:
        m = self.model
        ids = np.asarray(ids, dtype=np.int64)
        is_video = ids < m.n_videos
        vid = ids[is_video]
        com = ids[~is_video] - m.n_videos
        parts, order = [], []
        if len(vid):
            parts.append(m.video_inputs(vid))
            order.append(np.flatnonzero(is_video))
        if len(com):
            parts.append(ag.take(self.x_comm(), com))
            order.append(np.flatnonzero(~is_video))
        if len(parts) == 1:
            return parts[0]
        perm = np.empty(len(ids), dtype=np.int64)
        perm[np.concatenate(order)] = np.arange(len(ids))
        return ag.take(ag.concat(parts, axis=0), perm)

    def memory_rows(self, ids: np.ndarray) -> Tensor:
        const = Tensor(self.state.bank.h[ids])
        if self._override is None:
            return const
        pos = self._override[ids]
        if not np.any(pos >= 0):
            return const
        n_up = len(self.update.touched)
        idx = np.where(pos >= 0, pos, n_up + np.arange(len(ids)))
        return ag.take(ag.concat([self.update.new_h, const], axis=0), idx)

    def state_rows(self, ids: np.ndarray) -> Tensor:
        return ag.add(self.memory_rows(ids), self.x_rows(ids))


class PathwayModel:
    """Parameters plus train-split structures for one corpus."""

    def __init__(self, corpus: Corpus, split: Split, config: TrainConfig):
        self.cfg = config.validate()
        self.corpus = corpus
        self.split = split
        self.n_videos = corpus.n_videos
        self.n_communities = corpus.n_communities
        self.n_nodes = self.n_videos + self.n_communities
        d = self.cfg.dim
        rng = np.random.default_rng(self.cfg.seed)

        train = np.asarray(split.train, dtype=np.int64)
        self.train_positions = train
        if self.cfg.threshold_seconds is not None:
            self.threshold = float(self.cfg.threshold_seconds)
        else:
            self.threshold = fit_threshold(corpus, train, self.cfg.c)
        self.cigs = build_train_cigs(corpus, train, self.threshold, self.cfg.cig_mode, self.cfg.seed)
        self._prepare_static()
        self._prepare_prefixes()

        features = None
        if self.cfg.use_content and self.cfg.feature_file:
            features = load_feature_file(self.cfg.feature_file, d)
        content = build_content(corpus.video_index.ids, corpus.channel_of, d, features, rng)
        self.video_vec = content.video_vec
        self.channel_of = content.channel_of
        self.channel_ids = content.channel_ids

        P = self.params = ParamStore()
        P.add("community.table", xavier(rng, (self.n_communities, d)))
        P.add("channel.table", content.channel_init)
        if self.cfg.aggregation == "concat":
            P.add("content.proj.W", xavier(rng, (2 * d, d)))
            P.add("content.proj.b", np.zeros(d))
        P.add("attn.w1", xavier(rng, (d,)))
        P.add("attn.Wg", xavier(rng, (d, d)))
        P.add("attn.Wh", xavier(rng, (d, d)))
        P.add("attn.b", np.zeros(d))
        P.add("head.W", xavier(rng, (2 * d, d)))
        P.add("head.b", np.zeros(d))
        # log-spaced frequencies cover gaps from seconds to years; random phases
        # keep sin(dt * w2 + b1) away from zero on the slow channels
        P.add("time.w2", 1.0 / 10.0 ** np.linspace(0, 9, d))
        P.add("time.b1", rng.uniform(0.0, 2.0 * np.pi, d))
        for name, fan_in in (("msg_node", 3 * d), ("msg_edge", 5 * d)):
            P.add(f"{name}.W1", xavier(rng, (fan_in, d)))
            P.add(f"{name}.b1", np.zeros(d))
            P.add(f"{name}.W2", xavier(rng, (d, d)))
            P.add(f"{name}.b2", np.zeros(d))
        for gate in ("r", "z", "n"):
            P.add(f"gru.W{gate}", xavier(rng, (d, d)))
            P.add(f"gru.U{gate}", xavier(rng, (d, d)))
            P.add(f"gru.b{gate}", np.zeros(d))
        for layer in (1, 2):
            for w in ("Wq", "Wk", "Wv"):
                P.add(f"gat{layer}.{w}", xavier(rng, (2 * d, d)))
            P.add(f"gat{layer}.out.W1", xavier(rng, (2 * d, d)))
            P.add(f"gat{layer}.out.b1", np.zeros(d))
            P.add(f"gat{layer}.out.W2", xavier(rng, (d, d)))
            P.add(f"gat{layer}.out.b2", np.zeros(d))
        P.add("score.inner.W", xavier(rng, (d, d)))
        P.add("score.inner.b", np.zeros(d))
        P.add("score.outer.W", xavier(rng, (d, 1)))
        P.add("score.outer.b", np.zeros(1))

    # ------------------------------------------------------------ precomputation

    def _prepare_static(self) -> None:
        cidx = self.corpus.community_index
        self.cig_nodes: dict[int, np.ndarray] = {}
        self.cig_ops: dict[int, np.ndarray] = {}
        self.cig_pos: dict[int, dict[int, int]] = {}
        S = self.n_communities
        acc_rows, acc_cols, acc_vals = [], [], []
        counts = np.zeros(S)
        for v, cig in self.cigs.items():
            nodes = np.array([cidx[c] for c in cig.nodes], dtype=np.int64)
            op = appnp_operator(cig, self.cfg.alpha, self.cfg.n_layers)
            self.cig_nodes[v] = nodes
            self.cig_ops[v] = op
            self.cig_pos[v] = {int(c): i for i, c in enumerate(nodes)}
            acc_rows.append(np.repeat(nodes, len(nodes)))
            acc_cols.append(np.tile(nodes, len(nodes)))
            acc_vals.append(op.reshape(-1))
            counts[nodes] += 1
        # raw community inputs: mean of a community's propagated rows over every graph containing it
        if acc_rows:
            q = sp.coo_matrix(
                (np.concatenate(acc_vals), (np.concatenate(acc_rows), np.concatenate(acc_cols))), shape=(S, S)
            ).tocsr()
        else:
            q = sp.csr_matrix((S, S))
        scale = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)
        absent = sp.diags((counts == 0).astype(np.float64))
        self.q_matrix = (sp.diags(scale) @ q + absent).tocsr()

    def _prepare_prefixes(self) -> None:
        self.train_seq: dict[int, list[int]] = {}
        self.prefix_len = {}
        for p in self.train_positions.tolist():
            v = int(self.corpus.video[p])
            seq = self.train_seq.setdefault(v, [])
            self.prefix_len[p] = len(seq)
            seq.append(int(self.corpus.community[p]))
        self.train_observed = {v: set(seq) for v, seq in self.train_seq.items()}

    # ------------------------------------------------------------ features

    def video_inputs(self, vid: np.ndarray) -> Tensor:
        P = self.params
        vv = Tensor(self.video_vec[vid])
        ch = ag.take(P["channel.table"], self.channel_of[vid])
        scheme = self.cfg.aggregation
        if scheme == "add":
            return ag.add(vv, ch)
        if scheme == "mul":
            return ag.mul(vv, ch)
        return ag.add(ag.matmul(ag.concat([vv, ch], axis=-1), P["content.proj.W"]), P["content.proj.b"])

    # ------------------------------------------------------------ state handling

    def new_state(self) -> StreamState:
        return StreamState(dyn.MemoryBank(self.n_nodes, self.cfg.dim), dyn.TemporalGraph(self.n_nodes))

    def _endpoints(self, positions: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        c = self.corpus
        return c.video[positions], self.n_videos + c.community[positions], c.timestamp[positions].astype(np.float64)

    def _apply_pending(self, state: StreamState, ctx_factory) -> tuple[_BatchContext, _Update | None]:
        if len(state.pending) == 0:
            return ctx_factory(None), None
        src, dst, t = self._endpoints(state.pending)
        both = np.unique(np.concatenate([src, dst]))
        new_nodes = both[~state.bank.seen[both]]
        pre_ctx = ctx_factory(None)
        touched, new_h, last = dyn.memory_update(state.bank, src, dst, t, new_nodes, pre_ctx.x_rows, self.params)
        update = _Update(touched, new_h, last)
        state.graph.add_edges(src, dst, t)
        ctx = ctx_factory(update)
        ctx._x_comm = pre_ctx._x_comm
        return ctx, update

    @staticmethod
    def _commit(state: StreamState, update: _Update | None, pending: np.ndarray) -> None:
        if update is not None:
            state.bank.h[update.touched] = update.new_h.data
            state.bank.last_update[update.touched] = np.maximum(state.bank.last_update[update.touched], update.last)
            state.bank.seen[update.touched] = True
        state.pending = np.asarray(pending, dtype=np.int64)

    def observe(self, state: StreamState, positions) -> None:
        """Feed a batch of events without predictions (replay)."""
        with ag.no_grad():
            _, update = self._apply_pending(state, lambda u: _BatchContext(self, state, u))
            self._commit(state, update, positions)

    def flush(self, state: StreamState) -> None:
        self.observe(state, np.zeros(0, dtype=np.int64))

    def embed(self, ctx: _BatchContext, nodes: np.ndarray, times: np.ndarray) -> Tensor:
        return dyn.temporal_embed(nodes, times, ctx.state.graph, ctx.state_rows, self.params, self.cfg.n_neighbors)

    # ------------------------------------------------------------ losses

    def sample_negatives(self, positions: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        from .trainer import sample_negative

        out = np.empty(len(positions), dtype=np.int64)
        for i, p in enumerate(positions.tolist()):
            v = int(self.corpus.video[p])
            out[i] = sample_negative(self.train_observed.get(v, set()), self.n_communities, rng)
        return out

    def ce_term(self, positions: np.ndarray) -> Tensor | None:
        """Summed next-community cross-entropy for events with a non-empty train prefix."""
        P = self.params
        n_max = self.cfg.max_seq_len
        rows = [(p, int(self.corpus.video[p])) for p in positions.tolist() if self.prefix_len.get(p, 0) > 0]
        if not rows:
            return None
        videos = sorted({v for _, v in rows})
        offset, ops, gather = {}, [], []
        total = 0
        for v in videos:
            offset[v] = total
            ops.append(self.cig_ops[v])
            gather.append(self.cig_nodes[v])
            total += len(self.cig_nodes[v])
        block = sp.block_diag(ops, format="csr")
        table = P["community.table"]
        propagated = ag.spmm(block, ag.take(table, np.concatenate(gather)))

        E = len(rows)
        seq_idx = np.zeros((E, n_max), dtype=np.int64)
        mask = np.zeros((E, n_max), dtype=bool)
        last_idx = np.zeros(E, dtype=np.int64)
        target = np.zeros(E, dtype=np.int64)
        for i, (p, v) in enumerate(rows):
            prefix = self.train_seq[v][: self.prefix_len[p]][-n_max:]
            ids = [offset[v] + self.cig_pos[v][c] for c in prefix]
            seq_idx[i, : len(ids)] = ids
            mask[i, : len(ids)] = True
            last_idx[i] = ids[-1]
            target[i] = int(self.corpus.community[p])
        embs = ag.take(propagated, seq_idx)
        last = ag.take(propagated, last_idx)
        context = session_attention_batch(embs, mask, last, P["attn.w1"], P["attn.Wg"], P["attn.Wh"], P["attn.b"])
        logits = head_logits(context, last, table, P["head.W"], P["head.b"])
        picked = ag.getitem(ag.log_softmax(logits, axis=-1), (np.arange(E), target))
        return ag.mul(ag.sum(picked), -1.0)

    def batch_loss(self, state: StreamState, positions: np.ndarray, negatives: np.ndarray):
        """Total loss for one training batch; returns (loss, parts, update)."""
        cfg = self.cfg
        ctx, update = self._apply_pending(state, lambda u: _BatchContext(self, state, u))
        v, c, t = self._endpoints(positions)
        neg = self.n_videos + negatives
        B = len(positions)
        emb = self.embed(ctx, np.concatenate([v, c, neg]), np.concatenate([t, t, t]))
        ev = ag.take(emb, np.arange(B))
        ep = ag.take(emb, np.arange(B, 2 * B))
        en = ag.take(emb, np.arange(2 * B, 3 * B))
        pos_s = dyn.score(ev, ep, self.params)
        neg_s = dyn.score(ev, en, self.params)
        bpr = ag.sum(ag.softplus(ag.sub(neg_s, pos_s)))
        loss = bpr
        parts = {"bpr": bpr.item(), "ce": 0.0, "reg": 0.0}
        if cfg.lambda1 > 0:
            ce = self.ce_term(positions)
            if ce is not None:
                loss = ag.add(loss, ag.mul(ce, cfg.lambda1))
                parts["ce"] = ce.item()
        if cfg.lambda2 > 0:
            reg = self.params.l2()
            loss = ag.add(loss, ag.mul(reg, cfg.lambda2))
            parts["reg"] = reg.item()
        return loss, parts, update

    # ------------------------------------------------------------ inference

    def score_candidates(self, state: StreamState, positions: np.ndarray, candidates: list[np.ndarray]) -> list[np.ndarray]:
        """Score candidate communities for each event, using memory from before this batch.

        Also applies the pending update, so the caller must afterwards call
        :meth:`finish_batch` with the same positions.
        """
        with ag.no_grad():
            ctx, update = self._apply_pending(state, lambda u: _BatchContext(self, state, u))
            self._commit(state, update, state.pending)
            state.pending = np.zeros(0, dtype=np.int64)
            v, _, t = self._endpoints(positions)
            sizes = [len(cs) for cs in candidates]
            cand = self.n_videos + np.concatenate(candidates) if candidates else np.zeros(0, dtype=np.int64)
            cand_t = np.repeat(t, sizes)
            ctx = _BatchContext(self, state, None)
            emb = self.embed(ctx, np.concatenate([v, cand]), np.concatenate([t, cand_t]))
            B = len(positions)
            ev = ag.take(emb, np.repeat(np.arange(B), sizes))
            ec = ag.take(emb, np.arange(B, B + len(cand)))
            scores = dyn.score(ev, ec, self.params).data
        return np.split(scores, np.cumsum(sizes)[:-1]) if sizes else []

    def finish_batch(self, state: StreamState, positions) -> None:
        state.pending = np.asarray(positions, dtype=np.int64)

    # ------------------------------------------------------------ persistence

    def save(self, path, state: StreamState | None = None, extra_meta: dict | None = None) -> None:
        arrays = dict(self.params.copy_arrays())
        if state is not None:
            arrays["memory.h"] = state.bank.h
            arrays["memory.last_update"] = state.bank.last_update
            arrays["memory.seen"] = state.bank.seen.astype(np.float64)
        meta = {
            "config": self.cfg.to_dict(),
            "threshold_seconds": self.threshold,
            "corpus_fingerprint": corpus_fingerprint(self.corpus),
            "split_sizes": list(self.split.sizes),
            "n_videos": self.n_videos,
            "n_communities": self.n_communities,
        }
        meta.update(extra_meta or {})
        save_arrays(path, arrays, meta)

    @classmethod
    def load(cls, path, corpus: Corpus, split: Split) -> tuple["PathwayModel", StreamState | None, dict]:
        arrays, meta = load_arrays(path)
        if meta.get("corpus_fingerprint") != corpus_fingerprint(corpus):
            raise ValueError("checkpoint was trained on a different corpus")
        model = cls(corpus, split, TrainConfig.from_dict(meta["config"]))
        model.params.load_arrays(arrays)
        state = None
        if "memory.h" in arrays:
            state = model.new_state()
            state.bank.h[...] = arrays["memory.h"]
            state.bank.last_update[...] = arrays["memory.last_update"]
            state.bank.seen[...] = arrays["memory.seen"] > 0
        return model, state, meta
