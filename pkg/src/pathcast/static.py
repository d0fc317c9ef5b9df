"""Static modeling: content aggregation and community-influence propagation.

Community embeddings are smoothed over each video's influence graph with
personalized-PageRank style propagation, then a soft-attention readout over
the video's posting sequence feeds a softmax over all communities.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import autograd as ag
from .autograd import Tensor
from .cig import Cig

SCHEMES = ("concat", "add", "mul")


def hashed_unit_vector(key: str, dim: int) -> np.ndarray:
    """Deterministic pseudo-random unit vector seeded by a stable hash of ``key``."""
    seed = int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")
    v = np.random.default_rng(seed).standard_normal(dim)
    return v / np.linalg.norm(v)


def load_feature_file(path: str | Path, dim: int) -> dict[str, np.ndarray]:
    """Read ``{"id": ..., "vector": [...]}`` lines; every vector must have length ``dim``."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            vec = np.asarray(rec["vector"], dtype=np.float64)
            if vec.shape != (dim,):
                raise ValueError(f"{path}:{lineno}: vector for {rec['id']!r} has length {vec.size}, expected {dim}")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"{path}:{lineno}: non-finite vector entries")
            out[str(rec["id"])] = vec
    return out


@dataclass
class ContentFeatures:
    """Fixed per-video vectors, initial per-channel vectors and the video -> channel map."""

    video_vec: np.ndarray  # (n_videos, D)
    channel_init: np.ndarray  # (n_channels, D)
    channel_of: np.ndarray  # (n_videos,) channel row per video
    channel_ids: list[str]


def build_content(
    video_ids: list[str],
    channel_map: dict[str, str],
    dim: int,
    features: dict[str, np.ndarray] | None = None,
    rng: np.random.Generator | None = None,
) -> ContentFeatures:
    """Assemble content features.

    Videos without a known channel form their own single-video channel.
    Vectors missing from ``features`` fall back to hashed unit vectors for
    videos and to Xavier-style random rows for channels.
    """
    features = features or {}
    rng = rng or np.random.default_rng(0)
    vv = np.stack([features.get(v, hashed_unit_vector(v, dim)) for v in video_ids]) if video_ids else np.zeros((0, dim))
    channel_ids: list[str] = []
    pos: dict[str, int] = {}
    of = np.zeros(len(video_ids), dtype=np.int64)
    for i, v in enumerate(video_ids):
        ch = channel_map.get(v) or f"__video__:{v}"
        if ch not in pos:
            pos[ch] = len(channel_ids)
            channel_ids.append(ch)
        of[i] = pos[ch]
    bound = np.sqrt(6.0 / (len(channel_ids) + dim)) if channel_ids else 0.0
    init = rng.uniform(-bound, bound, size=(len(channel_ids), dim))
    for ch, row in pos.items():
        if ch in features:
            init[row] = features[ch]
    return ContentFeatures(vv, init, of, channel_ids)


def aggregate_content(video_vec, channel_vec, scheme: str = "mul", proj_w=None, proj_b=None) -> Tensor:
    """Join video and channel vectors; ``concat`` is projected back to D when a projection is given."""
    video_vec, channel_vec = ag.as_tensor(video_vec), ag.as_tensor(channel_vec)
    if video_vec.shape != channel_vec.shape:
        raise ValueError(f"dimension mismatch: {video_vec.shape} vs {channel_vec.shape}")
    if scheme == "add":
        return ag.add(video_vec, channel_vec)
    if scheme == "mul":
        return ag.mul(video_vec, channel_vec)
    if scheme == "concat":
        joined = ag.concat([video_vec, channel_vec], axis=-1)
        if proj_w is None:
            return joined
        return ag.add(ag.matmul(joined, proj_w), proj_b)
    raise ValueError(f"unknown aggregation scheme {scheme!r}")


# ---------------------------------------------------------------- propagation


def normalized_adjacency(cig: Cig) -> sp.csr_matrix:
    """D^-1/2 (A + A^T + I) D^-1/2 over ``cig.nodes`` order."""
    pos = {c: i for i, c in enumerate(cig.nodes)}
    n = len(cig.nodes)
    rows, cols, vals = [], [], []
    for (s, d), w in cig.edges.items():
        rows += [pos[s], pos[d]]
        cols += [pos[d], pos[s]]
        vals += [w, w]
    a = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr() + sp.identity(n, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    dinv = sp.diags(1.0 / np.sqrt(deg))
    return (dinv @ a @ dinv).tocsr()


def appnp_propagate(cig: Cig, s0, alpha: float = 0.1, n_layers: int = 4) -> Tensor:
    """Iterate S <- (1 - alpha) N S + alpha S0 ``n_layers`` times.

    ``s0`` holds one row per node of ``cig`` in ``cig.nodes`` order.
    """
    if n_layers < 1:
        raise ValueError("need at least one propagation layer")
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    if not cig.merged:
        raise ValueError("propagate over a merged (weighted) graph")
    s0 = ag.as_tensor(s0)
    norm = normalized_adjacency(cig)
    s = s0
    for _ in range(n_layers):
        s = ag.add(ag.mul(ag.spmm(norm, s), 1.0 - alpha), ag.mul(s0, alpha))
    return s


def appnp_operator(cig: Cig, alpha: float = 0.1, n_layers: int = 4) -> np.ndarray:
    """Dense matrix M with appnp_propagate(cig, S0) == M @ S0."""
    with ag.no_grad():
        return appnp_propagate(cig, np.eye(len(cig.nodes)), alpha, n_layers).data


# ---------------------------------------------------------------- session readout


def session_attention(node_embs, w1, w_g, w_h, b) -> tuple[Tensor, Tensor]:
    """Unnormalized soft attention over a chronologically ordered node sequence.

    beta_i = w1 . sigmoid(W_g s_last + W_h s_i + b); context = sum_i beta_i s_i.
    """
    node_embs = ag.as_tensor(node_embs)
    if node_embs.shape[0] == 0:
        raise ValueError("empty sequence")
    last = node_embs[node_embs.shape[0] - 1]
    pre = ag.add(ag.add(ag.matmul(node_embs, w_h), ag.matmul(last, w_g)), b)
    beta = ag.matmul(ag.sigmoid(pre), w1)
    context = ag.matmul(beta, node_embs)
    return context, beta


def session_attention_batch(embs, mask: np.ndarray, last, w1, w_g, w_h, b) -> Tensor:
    """Padded-batch version of :func:`session_attention`; returns contexts (B, d).

    ``embs`` is (B, n, d), ``mask`` (B, n) marks real positions.
    """
    pre = ag.add(ag.add(ag.matmul(embs, w_h), ag.reshape(ag.matmul(last, w_g), (last.shape[0], 1, -1))), b)
    beta = ag.mul(ag.matmul(ag.sigmoid(pre), w1), mask.astype(np.float64))
    return ag.sum(ag.mul(embs, ag.reshape(beta, beta.shape + (1,))), axis=1)


def head_logits(context, last, table, head_w, head_b) -> Tensor:
    z = ag.add(ag.matmul(ag.concat([last, context], axis=-1), head_w), head_b)
    return ag.matmul(z, ag.transpose(table))


def next_community_distribution(context, last, table, head_w, head_b) -> Tensor:
    """Softmax over every community in the global table."""
    return ag.softmax(head_logits(context, last, table, head_w, head_b), axis=-1)
