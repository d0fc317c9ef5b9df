"""Per-video community influence graphs.

A graph is first built as a multigraph (edge -> multiplicity) and then
merged into a weighted digraph with weight ``ln(1 + multiplicity)``.
Besides the influence rule, three comparison constructions are provided:
``seq`` (temporally adjacent postings), ``fc`` (every earlier posting to
every later one) and ``er`` (Erdos-Renyi at the influence graph's density).
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .events import PostingInstance

MODES = ("influence", "seq", "fc", "er")


@dataclass
class Session:
    postings: list[PostingInstance]

    @property
    def start(self) -> int:
        return self.postings[0].timestamp

    @property
    def end(self) -> int:
        return self.postings[-1].timestamp


@dataclass
class Cig:
    video_id: str
    nodes: list[str]
    edges: dict[tuple[str, str], float] = field(default_factory=dict)
    mode: str = "influence"
    merged: bool = False
    n_sessions: int = 0

    def edge_set(self) -> set[tuple[str, str]]:
        return set(self.edges)


def partition_sessions(seq: Sequence[PostingInstance], threshold: float) -> list[Session]:
    """Greedy split: a new session starts when the gap to the previous posting exceeds ``threshold``."""
    sessions: list[Session] = []
    prev = None
    for ev in seq:
        if prev is None or ev.timestamp - prev > threshold:
            sessions.append(Session([ev]))
        else:
            sessions[-1].postings.append(ev)
        prev = ev.timestamp
    return sessions


def _nodes(seq: Sequence[PostingInstance]) -> list[str]:
    return list(dict.fromkeys(ev.community_id for ev in seq))


def _influence_edges(sessions: list[Session]) -> Counter:
    edges: Counter = Counter()
    for sess in sessions:
        ps = sess.postings
        for a in range(len(ps)):
            for b in range(a + 1, len(ps)):
                p, q = ps[a], ps[b]
                if p.user_id == q.user_id and p.community_id != q.community_id:
                    edges[(p.community_id, q.community_id)] += 1
                    edges[(q.community_id, p.community_id)] += 1
    for cur, nxt in zip(sessions, sessions[1:]):
        for p in cur.postings:
            for q in nxt.postings:
                if p.user_id == q.user_id or p.community_id == q.community_id:
                    continue
                edges[(p.community_id, q.community_id)] += 1
    return edges


def er_seed(video_id: str, seed: int) -> int:
    h = hashlib.sha256(f"{seed}:{video_id}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def build_cig(
    seq: Sequence[PostingInstance],
    threshold: float,
    mode: str = "influence",
    seed: int = 0,
    video_id: str | None = None,
) -> Cig:
    """Build the multigraph stage of a video's influence graph.

    ``seq`` must be the chronologically sorted training postings of one
    video. Edge values are multiplicities; pass the result through
    :func:`merge_weights` to obtain log weights.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    vid = video_id if video_id is not None else (seq[0].video_id if seq else "")
    nodes = _nodes(seq)
    sessions = partition_sessions(seq, threshold)
    edges: Counter = Counter()
    if mode == "influence":
        edges = _influence_edges(sessions)
    elif mode == "seq":
        for p, q in zip(seq, seq[1:]):
            if p.community_id != q.community_id:
                edges[(p.community_id, q.community_id)] += 1
    elif mode == "fc":
        for a in range(len(seq)):
            for b in range(a + 1, len(seq)):
                if seq[a].community_id != seq[b].community_id:
                    edges[(seq[a].community_id, seq[b].community_id)] += 1
    else:
        n_edges = len(_influence_edges(sessions))
        n = len(nodes)
        if n > 1 and n_edges:
            p = n_edges / (n * (n - 1))
            rng = np.random.default_rng(er_seed(vid, seed))
            draws = rng.random((n, n))
            for i in range(n):
                for j in range(n):
                    if i != j and draws[i, j] < p:
                        edges[(nodes[i], nodes[j])] += 1
    return Cig(vid, nodes, dict(edges), mode=mode, merged=False, n_sessions=len(sessions))


def er_probability(influence: Cig) -> float:
    n = len(influence.nodes)
    if n < 2:
        return 0.0
    return len(influence.edges) / (n * (n - 1))


def merge_weights(multigraph: Cig) -> Cig:
    """Collapse parallel edges; weight = ln(1 + count)."""
    if multigraph.merged:
        return multigraph
    edges = {k: math.log1p(c) for k, c in multigraph.edges.items() if c > 0}
    return Cig(multigraph.video_id, list(multigraph.nodes), edges, multigraph.mode, True, multigraph.n_sessions)


def _fmt(w: float) -> str:
    return f"{w:.6f}"


def export_graph(cig: Cig, fmt: str = "json") -> str:
    nodes = sorted(cig.nodes)
    edges = sorted(cig.edges.items())
    if fmt == "json":
        doc = {
            "video_id": cig.video_id,
            "mode": cig.mode,
            "nodes": nodes,
            "edges": [{"src": s, "dst": d, "weight": w} for (s, d), w in edges],
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"
    if fmt == "dot":
        lines = [f"digraph {json.dumps(cig.video_id or 'cig')} {{"]
        for n in nodes:
            lines.append(f"  {json.dumps(n)};")
        for (s, d), w in edges:
            lines.append(f"  {json.dumps(s)} -> {json.dumps(d)} [weight={_fmt(w)}, label=\"{_fmt(w)}\"];")
        lines.append("}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown export format {fmt!r}")


def parse_graph_json(text: str) -> Cig:
    doc = json.loads(text)
    edges = {(e["src"], e["dst"]): float(e["weight"]) for e in doc["edges"]}
    return Cig(doc["video_id"], list(doc["nodes"]), edges, doc.get("mode", "influence"), merged=True)
