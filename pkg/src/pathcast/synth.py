"""Synthetic posting corpora with a planted community DAG, and edge-recovery scoring.

Every video walks the planted DAG. Each hop is a posting by a user new to
the video, placed one log-normal cross-session gap after the previous hop.
Optional extras inside a hop's session:

* a concurrent posting by the previous hop's user in a predecessor of the
  next hop's community. It is never a first share, so the threshold fit is
  unaffected. Its only influence edge points into the next hop and is a
  DAG edge.
* at the last hop, a second posting by the hop's own user in another
  successor of the previous hop. This is a same-user cross-community pair
  and yields a bidirectional edge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .cig import Cig, build_cig, merge_weights
from .events import Corpus, PostingInstance
from .intervals import diff_user_intervals, fit_log_gaussian, pool, threshold_seconds


@dataclass
class SynthConfig:
    n_communities: int = 12
    n_videos: int = 100
    n_users: int | None = None  # None: a fresh user for every hop
    planted_edges: list[tuple[str, str]] | None = None
    dag_density: float = 0.25
    max_hops: int = 5
    start: str = "any"  # "any" non-sink community or only "sources"
    session_gap_logmean: float = 1.5
    session_gap_logstd: float = 0.3
    cross_session_gap_logmean: float = 4.5
    cross_session_gap_logstd: float = 0.25
    concurrent_share_prob: float = 0.0
    same_user_share_frac: float = 0.25
    horizon: float = 1e5
    n_channels: int = 0
    seed: int = 0

    def validate(self) -> "SynthConfig":
        if self.n_videos < 0:
            raise ValueError("n_videos must be non-negative")
        if self.planted_edges is None and self.n_communities < 2:
            raise ValueError("a random DAG needs at least 2 communities")
        if self.cross_session_gap_logmean - self.session_gap_logmean < 2:
            raise ValueError("cross-session gaps must sit at least 2 decades above within-session gaps")
        if min(self.session_gap_logstd, self.cross_session_gap_logstd) < 0:
            raise ValueError("gap spreads must be non-negative")
        for name in ("dag_density", "concurrent_share_prob", "same_user_share_frac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.max_hops < 1:
            raise ValueError("max_hops must be >= 1")
        if self.start not in ("any", "sources"):
            raise ValueError("start must be 'any' or 'sources'")
        if self.n_users is not None and self.n_users < self.max_hops + 1:
            raise ValueError("n_users must exceed max_hops so hops get distinct users")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        return self

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        if d["planted_edges"] is not None:
            d["planted_edges"] = [list(e) for e in d["planted_edges"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if d.get("planted_edges") is not None:
            d["planted_edges"] = [tuple(e) for e in d["planted_edges"]]
        return cls(**d).validate()


@dataclass
class PlantedTruth:
    communities: list[str]
    dag: set[tuple[str, str]]
    # intended influence edges per video; always a subset of ``dag``
    edges: dict[str, set[tuple[str, str]]] = field(default_factory=dict)
    # bidirectional edges from same-user cross-community pairs
    mutual_edges: dict[str, set[tuple[str, str]]] = field(default_factory=dict)
    paths: dict[str, list[str]] = field(default_factory=dict)

    def expected(self, video_id: str) -> set[tuple[str, str]]:
        return self.edges.get(video_id, set()) | self.mutual_edges.get(video_id, set())

    def to_dict(self) -> dict:
        def pairs(s):
            return [list(e) for e in sorted(s)]

        return {
            "communities": list(self.communities),
            "dag": pairs(self.dag),
            "edges": {v: pairs(s) for v, s in sorted(self.edges.items())},
            "mutual_edges": {v: pairs(s) for v, s in sorted(self.mutual_edges.items())},
            "paths": {v: list(p) for v, p in sorted(self.paths.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlantedTruth":
        def pairs(xs):
            return {tuple(e) for e in xs}

        return cls(
            list(d["communities"]),
            pairs(d["dag"]),
            {v: pairs(s) for v, s in d["edges"].items()},
            {v: pairs(s) for v, s in d["mutual_edges"].items()},
            {v: list(p) for v, p in d.get("paths", {}).items()},
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def random_dag(names: Sequence[str], density: float, rng: np.random.Generator) -> set[tuple[str, str]]:
    """Forward edges over a random topological order; each non-final node gets at least one successor."""
    order = [names[i] for i in rng.permutation(len(names))]
    edges = set()
    n = len(order)
    for i in range(n - 1):
        later = np.flatnonzero(rng.random(n - i - 1) < density) + i + 1
        if len(later) == 0:
            later = [int(rng.integers(i + 1, n))]
        edges.update((order[i], order[int(j)]) for j in later)
    return edges


def _gap(rng: np.random.Generator, logmean: float, logstd: float) -> int:
    return max(1, int(round(10.0 ** rng.normal(logmean, logstd))))


def generate(config: SynthConfig, seed: int | None = None) -> tuple[Corpus, PlantedTruth]:
    cfg = config.validate()
    seed = cfg.seed if seed is None else seed
    dag_rng = np.random.default_rng([seed, 0])
    if cfg.planted_edges is not None:
        names = list(dict.fromkeys(c for e in cfg.planted_edges for c in e))
        names += [f"c{i:02d}" for i in range(len(names), cfg.n_communities)]
        dag = {tuple(e) for e in cfg.planted_edges}
    else:
        names = [f"c{i:02d}" for i in range(cfg.n_communities)]
        dag = random_dag(names, cfg.dag_density, dag_rng)
    succ: dict[str, list[str]] = {c: [] for c in names}
    pred: dict[str, list[str]] = {c: [] for c in names}
    for a, b in sorted(dag):
        succ[a].append(b)
        pred[b].append(a)
    starts = [c for c in names if succ[c] and (cfg.start == "any" or not pred[c])]
    if cfg.n_videos > 0 and not starts:
        raise ValueError("planted DAG has no edges to walk")
    channels = [f"ch{i:03d}" for i in range(cfg.n_channels)]

    truth = PlantedTruth(names, dag)
    events: list[PostingInstance] = []
    user_counter = 0
    for v in range(cfg.n_videos):
        rng = np.random.default_rng([seed, 1, v])
        vid = f"v{v:05d}"
        channel = channels[int(rng.integers(len(channels)))] if channels else None

        path = [starts[int(rng.integers(len(starts)))]]
        while len(path) <= cfg.max_hops and succ[path[-1]]:
            nxt = succ[path[-1]]
            path.append(nxt[int(rng.integers(len(nxt)))])
        if cfg.n_users is None:
            users = [f"u{user_counter + k:07d}" for k in range(len(path))]
            user_counter += len(path)
        else:
            users = [f"u{int(u):05d}" for u in rng.choice(cfg.n_users, size=len(path), replace=False)]

        t = float(rng.uniform(0, cfg.horizon))
        edges = {(a, b) for a, b in zip(path, path[1:])}
        mutual: set[tuple[str, str]] = set()
        noisy_prev = False
        for k, (comm, user) in enumerate(zip(path, users)):
            if k > 0:
                t += _gap(rng, cfg.cross_session_gap_logmean, cfg.cross_session_gap_logstd)
            events.append(PostingInstance(vid, comm, user, int(t), None, channel))
            last = k == len(path) - 1
            if k == 0 or noisy_prev or rng.random() >= cfg.concurrent_share_prob:
                noisy_prev = False
                continue
            noisy_prev = True
            offset = _gap(rng, cfg.session_gap_logmean, cfg.session_gap_logstd)
            if last and rng.random() < cfg.same_user_share_frac:
                options = [c for c in succ[path[k - 1]] if c != comm]
                if options:
                    y = options[int(rng.integers(len(options)))]
                    events.append(PostingInstance(vid, y, user, int(t) + offset, None, channel))
                    edges.add((path[k - 1], y))
                    mutual |= {(comm, y), (y, comm)}
                    continue
            if last:
                options = [c for c in names if c != comm]
            else:
                options = [c for c in pred[path[k + 1]] if c != comm] or [path[k + 1]]
            x = options[int(rng.integers(len(options)))]
            events.append(PostingInstance(vid, x, users[k - 1], int(t) + offset, None, channel))
            if not last and x != path[k + 1]:
                edges.add((x, path[k + 1]))
        truth.paths[vid] = path
        truth.edges[vid] = edges
        if mutual:
            truth.mutual_edges[vid] = mutual
    return Corpus(events), truth


def fitted_threshold(corpus: Corpus, c: float = 3.0) -> float:
    seqs = [[corpus.events[p] for p in pos] for pos in corpus.sequences.values()]
    return threshold_seconds(fit_log_gaussian(pool(diff_user_intervals(s) for s in seqs)), c)


def recover(corpus: Corpus, mode: str = "influence", c: float = 3.0, threshold: float | None = None, seed: int = 0) -> dict[str, Cig]:
    """Build merged graphs for every video using a threshold fitted on the whole corpus."""
    thr = fitted_threshold(corpus, c) if threshold is None else threshold
    out = {}
    for vid, pos in corpus.sequences.items():
        seq = [corpus.events[p] for p in pos]
        out[vid] = merge_weights(build_cig(seq, thr, mode, seed=seed, video_id=vid))
    return out


def _edge_sets(x) -> dict[str, set] | set:
    if isinstance(x, PlantedTruth):
        return {v: x.expected(v) for v in set(x.edges) | set(x.mutual_edges)}
    if isinstance(x, Cig):
        return x.edge_set()
    if isinstance(x, dict):
        return {k: (c.edge_set() if isinstance(c, Cig) else set(c)) for k, c in x.items()}
    return set(x)


def recovery_score(built, truth) -> tuple[float, float]:
    """Directed-edge precision and recall, weights ignored.

    Per-video inputs (mappings video -> graph or edge set) are micro-averaged
    over videos; plain edge sets are compared directly. An empty built set has
    precision 1, an empty truth set has recall 1.
    """
    b, t = _edge_sets(built), _edge_sets(truth)
    if isinstance(b, dict) != isinstance(t, dict):
        b = set().union(*b.values()) if isinstance(b, dict) else b
        t = set().union(*t.values()) if isinstance(t, dict) else t
    if isinstance(b, dict):
        keys = set(b) | set(t)
        tp = sum(len(b.get(k, set()) & t.get(k, set())) for k in keys)
        nb = sum(len(s) for s in b.values())
        nt = sum(len(s) for s in t.values())
    else:
        tp, nb, nt = len(b & t), len(b), len(t)
    precision = tp / nb if nb else 1.0
    recall = tp / nt if nt else 1.0
    return precision, recall


def read_synth_config(path) -> SynthConfig:
    """``key = value`` file; planted_edges is written as ``A>B, B>C``."""
    from .config import read_kv_file

    raw = read_kv_file(path)
    fields = SynthConfig.__dataclass_fields__
    values = {}
    for k, v in raw.items():
        if k not in fields:
            raise ValueError(f"unknown synth key {k!r}")
        if k == "planted_edges":
            values[k] = [tuple(p.strip().split(">")) for p in v.split(",") if p.strip()]
        elif k == "start":
            values[k] = v
        elif k == "n_users":
            values[k] = None if v.lower() in ("none", "") else int(v)
        elif isinstance(fields[k].default, int) and not isinstance(fields[k].default, bool):
            values[k] = int(v)
        else:
            values[k] = float(v)
    return SynthConfig(**values).validate()


def sequences_of(corpus: Corpus) -> Iterable[list[PostingInstance]]:
    for pos in corpus.sequences.values():
        yield [corpus.events[p] for p in pos]


__all__ = [
    "SynthConfig",
    "PlantedTruth",
    "generate",
    "random_dag",
    "recover",
    "recovery_score",
    "fitted_threshold",
    "read_synth_config",
]
