"""Continuous-time dynamic graph components.

Nodes share one id space: videos first, then communities. Each node owns a
memory vector updated by a GRU on mean-pooled messages; embeddings at query
time come from two rounds of attention over each node's most recent
temporal neighbors.
"""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def linear(x, w, b) -> Tensor:
    return ag.add(ag.matmul(x, w), b)


def mlp(x, layers) -> Tensor:
    """Stack of (W, b) layers with ReLU between them (none after the last)."""
    for i, (w, b) in enumerate(layers):
        x = linear(x, w, b)
        if i < len(layers) - 1:
            x = ag.relu(x)
    return x


def time_encode(dt, w2, b1) -> Tensor:
    """cos(dt * w2 + b1), one d-vector per entry of ``dt``."""
    dt = np.asarray(dt, dtype=np.float64)
    return ag.cos(ag.add(ag.mul(dt[..., None], w2), b1))


def gru_cell(x, h, P: Mapping[str, Tensor], prefix: str = "gru") -> Tensor:
    r = ag.sigmoid(ag.add(ag.add(ag.matmul(x, P[f"{prefix}.Wr"]), ag.matmul(h, P[f"{prefix}.Ur"])), P[f"{prefix}.br"]))
    z = ag.sigmoid(ag.add(ag.add(ag.matmul(x, P[f"{prefix}.Wz"]), ag.matmul(h, P[f"{prefix}.Uz"])), P[f"{prefix}.bz"]))
    n = ag.tanh(
        ag.add(ag.add(ag.matmul(x, P[f"{prefix}.Wn"]), ag.mul(r, ag.matmul(h, P[f"{prefix}.Un"]))), P[f"{prefix}.bn"])
    )
    # h' = (1 - z) * n + z * h
    return ag.add(n, ag.mul(z, ag.sub(h, n)))


def _layers(P: Mapping[str, Tensor], prefix: str, n: int) -> list[tuple[Tensor, Tensor]]:
    return [(P[f"{prefix}.W{i}"], P[f"{prefix}.b{i}"]) for i in range(1, n + 1)]


def node_message(h, x, dt, P: Mapping[str, Tensor]) -> Tensor:
    """MLP([h(t') || x(t) || phi(t - t')]) for node-addition events."""
    phi = time_encode(dt, P["time.w2"], P["time.b1"])
    return mlp(ag.concat([h, x, phi], axis=-1), _layers(P, "msg_node", 2))


def edge_message(h_self, h_other, x_self, x_other, dt_self, P: Mapping[str, Tensor]) -> Tensor:
    """Message for one endpoint of an interaction; the same MLP serves both endpoints."""
    phi = time_encode(dt_self, P["time.w2"], P["time.b1"])
    return mlp(ag.concat([h_self, h_other, x_self, x_other, phi], axis=-1), _layers(P, "msg_edge", 2))


def score(video_emb, community_emb, P: Mapping[str, Tensor]) -> Tensor:
    """Outer(video * Inner(community)); returns one scalar per row."""
    video_emb, community_emb = ag.as_tensor(video_emb), ag.as_tensor(community_emb)
    if video_emb.shape[-1] != community_emb.shape[-1]:
        raise ValueError("video and community embeddings differ in dimension")
    inner = linear(community_emb, P["score.inner.W"], P["score.inner.b"])
    out = linear(ag.mul(video_emb, inner), P["score.outer.W"], P["score.outer.b"])
    return ag.reshape(out, out.shape[:-1])


# ---------------------------------------------------------------- state


class MemoryBank:
    """Per-node memory vectors and last-update times; all start at zero."""

    def __init__(self, n_nodes: int, dim: int):
        self.h = np.zeros((n_nodes, dim))
        self.last_update = np.zeros(n_nodes)
        self.seen = np.zeros(n_nodes, dtype=bool)

    def delta(self, nodes: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Time since each node's last update; 0 for nodes never updated."""
        return np.where(self.seen[nodes], t - self.last_update[nodes], 0.0)


class TemporalGraph:
    """Per-node chronological neighbor lists (neighbor id, interaction time)."""

    def __init__(self, n_nodes: int):
        self.nbrs: list[list[int]] = [[] for _ in range(n_nodes)]
        self.times: list[list[float]] = [[] for _ in range(n_nodes)]

    def add_edges(self, src: np.ndarray, dst: np.ndarray, t: np.ndarray) -> None:
        for a, b, tt in zip(src.tolist(), dst.tolist(), t.tolist()):
            if (self.times[a] and tt < self.times[a][-1]) or (self.times[b] and tt < self.times[b][-1]):
                raise ValueError("edges must be added in non-decreasing time")
            self.nbrs[a].append(b)
            self.times[a].append(tt)
            self.nbrs[b].append(a)
            self.times[b].append(tt)

    def recent(self, nodes: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Last ``k`` neighbors per node as padded (ids, times, mask) arrays."""
        q = len(nodes)
        ids = np.zeros((q, k), dtype=np.int64)
        ts = np.zeros((q, k))
        mask = np.zeros((q, k), dtype=bool)
        for row, u in enumerate(nodes.tolist()):
            nb = self.nbrs[u]
            if not nb:
                continue
            sel = nb[-k:]
            m = len(sel)
            ids[row, :m] = sel
            ts[row, :m] = self.times[u][-k:]
            mask[row, :m] = True
        return ids, ts, mask


# ---------------------------------------------------------------- memory update


def memory_update(
    bank: MemoryBank,
    src: np.ndarray,
    dst: np.ndarray,
    t: np.ndarray,
    new_nodes: np.ndarray,
    x_rows,
    P: Mapping[str, Tensor],
) -> tuple[np.ndarray, Tensor, np.ndarray]:
    """Messages for a batch of interactions, mean-pooled per node, then one GRU step.

    ``src``/``dst`` are the endpoints of each interaction at times ``t``;
    ``new_nodes`` receive an extra node-addition message. ``x_rows(ids)``
    returns raw input features. Every message uses the bank state from
    before the batch. Returns (touched node ids, new memory rows, new
    last-update times).
    """
    t = np.asarray(t, dtype=np.float64)
    if len(t) and (np.any(np.diff(t) < 0) or np.any(bank.delta(src, t) < 0) or np.any(bank.delta(dst, t) < 0)):
        raise ValueError("out-of-order event: batch must be time-ordered and after every node's last update")
    h_src, h_dst = Tensor(bank.h[src]), Tensor(bank.h[dst])
    x_src, x_dst = x_rows(src), x_rows(dst)
    msgs = [
        edge_message(h_src, h_dst, x_src, x_dst, bank.delta(src, t), P),
        edge_message(h_dst, h_src, x_dst, x_src, bank.delta(dst, t), P),
    ]
    owners = [src, dst]
    if len(new_nodes):
        msgs.append(node_message(Tensor(bank.h[new_nodes]), x_rows(new_nodes), np.zeros(len(new_nodes)), P))
        owners.append(new_nodes)
    owner = np.concatenate(owners)
    touched, seg = np.unique(owner, return_inverse=True)
    mean_msg = ag.segment_mean(ag.concat(msgs, axis=0), seg, len(touched))
    new_h = gru_cell(mean_msg, Tensor(bank.h[touched]), P)
    times = np.concatenate([t, t] + ([np.full(len(new_nodes), -np.inf)] if len(new_nodes) else []))
    last = np.full(len(touched), -np.inf)
    np.maximum.at(last, seg, times)
    return touched, new_h, last


# ---------------------------------------------------------------- embedding


def gat_layer(query, keys, dt, mask, P: Mapping[str, Tensor], layer: int) -> tuple[Tensor, Tensor]:
    """Single-head temporal attention of each query row over its K neighbor rows.

    query (Q, d); keys (Q, K, d); dt (Q, K) time since each interaction.
    Rows without neighbors aggregate to zero and only transform their own state.
    Returns (outputs (Q, d), attention weights (Q, K)).
    """
    pre = f"gat{layer}"
    d = query.shape[-1]
    q_in = ag.concat([query, time_encode(np.zeros(query.shape[0]), P["time.w2"], P["time.b1"])], axis=-1)
    k_in = ag.concat([keys, time_encode(dt, P["time.w2"], P["time.b1"])], axis=-1)
    q = ag.matmul(q_in, P[f"{pre}.Wq"])
    k = ag.matmul(k_in, P[f"{pre}.Wk"])
    v = ag.matmul(k_in, P[f"{pre}.Wv"])
    logits = ag.mul(ag.sum(ag.mul(k, ag.reshape(q, (q.shape[0], 1, d))), axis=-1), 1.0 / np.sqrt(d))
    att = ag.softmax(logits, axis=-1, mask=mask)
    agg = ag.sum(ag.mul(v, ag.reshape(att, att.shape + (1,))), axis=1)
    out = mlp(ag.concat([agg, query], axis=-1), _layers(P, f"{pre}.out", 2))
    return out, att


def _dedupe(nodes: np.ndarray, times: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    keys = np.stack([nodes.astype(np.float64), times], axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    return uniq[:, 0].astype(np.int64), uniq[:, 1], inv.reshape(-1)


def temporal_embed(
    nodes: np.ndarray,
    times: np.ndarray,
    graph: TemporalGraph,
    state_rows,
    P: Mapping[str, Tensor],
    k: int = 10,
) -> Tensor:
    """Two-layer temporal attention embeddings for (node, time) queries.

    ``state_rows(ids)`` gives the layer-0 state (memory + raw features).
    Neighbor lists of ``graph`` must only contain interactions visible at
    the query times.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    tgt_u, tgt_t, tgt_inv = _dedupe(nodes, times)

    # layer-2 queries attend to their neighbors' layer-1 states at the same time
    n2, t2, m2 = graph.recent(tgt_u, k)
    l1_nodes = np.concatenate([tgt_u, n2[m2]])
    l1_times = np.concatenate([tgt_t, np.broadcast_to(tgt_t[:, None], n2.shape)[m2]])
    u1, t1, inv1 = _dedupe(l1_nodes, l1_times)

    n1, e1, m1 = graph.recent(u1, k)
    u0, inv0 = np.unique(np.concatenate([u1, n1.reshape(-1)]), return_inverse=True)
    z0 = state_rows(u0)
    q0 = ag.take(z0, inv0[: len(u1)])
    k0 = ag.take(z0, inv0[len(u1) :].reshape(n1.shape))
    z1, _ = gat_layer(q0, k0, t1[:, None] - e1, m1, P, 1)

    q1 = ag.take(z1, inv1[: len(tgt_u)])
    key_idx = np.zeros(n2.shape, dtype=np.int64)
    key_idx[m2] = inv1[len(tgt_u) :]
    k1 = ag.take(z1, key_idx)
    z2, _ = gat_layer(q1, k1, tgt_t[:, None] - t2, m2, P, 2)
    return ag.take(z2, tgt_inv)
