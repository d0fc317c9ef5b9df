"""Command-line entry point: ``pathcast <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
Every command writes a JSON run manifest next to its primary output.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import re
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .autograd import NumericError
from .cig import MODES, build_cig, export_graph, merge_weights
from .config import load_config, parse_overrides
from .events import Corpus, DataError, chronological_split, ingest_events, posting_sequence
from .intervals import analyze
from .static import SCHEMES

log = logging.getLogger("pathcast")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, argv, config: dict, seed, inputs, outputs, wall: float) -> None:
    doc = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "inputs": {str(p): sha256_file(p) for p in inputs if p and Path(p).exists()},
        "outputs": {str(p): sha256_file(p) for p in outputs if p and Path(p).exists()},
        "wall_seconds": round(wall, 3),
        "versions": {
            "pathcast": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _kv_pairs(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k] = v
    return out


def _load_corpus(args) -> Corpus:
    corpus = ingest_events(args.corpus)
    if getattr(args, "min_communities", None):
        corpus = corpus.filter_min_communities(args.min_communities)
    if len(corpus) == 0:
        raise DataError(f"{args.corpus}: no events")
    return corpus


def _train_config(args):
    try:
        overrides = parse_overrides(_kv_pairs(args.set))
        for name in ("seed", "epochs", "lr", "dim", "batch_size", "cig_mode", "aggregation"):
            if getattr(args, name, None) is not None:
                overrides[name] = getattr(args, name)
        return load_config(args.config, **overrides)
    except (ValueError, TypeError, OSError) as exc:
        raise UsageError(f"bad configuration: {exc}") from None


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    from .synth import SynthConfig, generate, read_synth_config

    try:
        cfg = read_synth_config(args.config) if args.config else SynthConfig()
        extra = _kv_pairs(args.set)
        if extra:
            d = cfg.to_dict()
            for k, v in extra.items():
                if k not in d:
                    raise ValueError(f"unknown synth key {k!r}")
                kind = type(SynthConfig.__dataclass_fields__[k].default)
                d[k] = v if kind is str else (None if v.lower() == "none" else (int(v) if kind is int else float(v)))
            cfg = SynthConfig.from_dict(d)
        if args.seed is not None:
            cfg = SynthConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    except (ValueError, TypeError, OSError) as exc:
        raise UsageError(f"bad synth configuration: {exc}") from None
    corpus, truth = generate(cfg)
    corpus.to_jsonl(args.out)
    outputs = [args.out]
    if args.truth:
        Path(args.truth).write_text(truth.dumps())
        outputs.append(args.truth)
    return cfg.to_dict(), cfg.seed, [args.config], outputs


def cmd_ingest(args):
    corpus = _load_corpus(args)
    corpus.to_jsonl(args.out)
    summary = {"events": len(corpus), "videos": corpus.n_videos, "communities": corpus.n_communities, "users": corpus.n_users}
    print(json.dumps(summary, sort_keys=True))
    return {"min_communities": args.min_communities}, None, [args.corpus], [args.out]


def cmd_analyze(args):
    corpus = _load_corpus(args)
    seqs = [posting_sequence(corpus, v) for v in corpus.sequences]
    try:
        report = analyze(seqs, c=args.c, bins=args.bins)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    Path(args.out).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    outputs = [args.out]
    if args.csv:
        rows = report.get("histogram") or []
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lo", "hi", "count"])
            for b in rows:
                w.writerow([f"{b['lo']:.6f}", f"{b['hi']:.6f}", b["count"]])
        outputs.append(args.csv)
    if report.get("threshold_seconds") is not None:
        print(f"threshold_seconds {report['threshold_seconds']:.3f}")
    return {"c": args.c, "bins": args.bins}, None, [args.corpus], outputs


def _threshold_for(corpus: Corpus, args) -> tuple[float, list[int]]:
    from .model import fit_threshold

    positions = list(range(len(corpus)))
    if args.split == "train":
        positions = list(chronological_split(corpus).train)
    thr = args.threshold if args.threshold is not None else fit_threshold(corpus, positions, args.c)
    return thr, positions


def _safe_name(video_id: str) -> str:
    safe = re.sub(r"[^A-Za-z0-9._-]", "_", video_id)
    if safe != video_id:
        safe += "-" + hashlib.sha256(video_id.encode()).hexdigest()[:8]
    return safe


def cmd_build_cig(args):
    corpus = _load_corpus(args)
    thr, positions = _threshold_for(corpus, args)
    keep = set(positions)
    if args.video != "all" and args.video not in corpus.sequences:
        raise DataError(f"unknown video {args.video!r}")
    videos = sorted(corpus.sequences) if args.video == "all" else [args.video]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs, summary = [], []
    for vid in videos:
        seq = [corpus.events[p] for p in corpus.sequences[vid] if p in keep]
        if not seq:
            continue
        cig = merge_weights(build_cig(seq, thr, args.mode, seed=args.seed, video_id=vid))
        path = out_dir / f"{_safe_name(vid)}.json"
        path.write_text(export_graph(cig, "json"))
        outputs.append(path)
        summary.append((vid, len(cig.nodes), len(cig.edges), cig.n_sessions))
    summary_path = out_dir / "summary.csv"
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "nodes", "edges", "sessions"])
        w.writerows(summary)
    outputs.append(summary_path)
    print(f"{len(summary)} graphs, threshold {thr:.3f} s")
    cfg = {"mode": args.mode, "c": args.c, "threshold": thr, "split": args.split, "video": args.video}
    return cfg, args.seed, [args.corpus], outputs


def cmd_export_graph(args):
    corpus = _load_corpus(args)
    thr, positions = _threshold_for(corpus, args)
    if args.video not in corpus.sequences:
        raise DataError(f"unknown video {args.video!r}")
    keep = set(positions)
    seq = [corpus.events[p] for p in corpus.sequences[args.video] if p in keep]
    if not seq:
        raise DataError(f"video {args.video!r} has no postings in the {args.split} split")
    cig = merge_weights(build_cig(seq, thr, args.mode, seed=args.seed, video_id=args.video))
    Path(args.out).write_text(export_graph(cig, args.format))
    cfg = {"mode": args.mode, "format": args.format, "threshold": thr, "video": args.video}
    return cfg, args.seed, [args.corpus], [args.out]


def cmd_train(args):
    from .trainer import train, tune

    corpus = _load_corpus(args)
    cfg = _train_config(args)
    split = chronological_split(corpus)
    tuning = None
    if args.tune:
        best, scores = tune(corpus, split, cfg)
        tuning = {"best_lr": best, "val_mrr": {str(k): v for k, v in scores.items()}}
        cfg = cfg.replace(lr=best)
    result = train(corpus, split, cfg)
    history = [e.__dict__ for e in result.history]
    result.model.save(args.out, result.state, {"history_loss": [h["train_loss"] for h in history]})
    from .params import blob_path, manifest_path

    hist_path = Path(f"{args.out}.history.json")
    # wall-clock timings are excluded so the history is reproducible byte for byte
    clean = [{k: v for k, v in h.items() if k != "wall_ms"} for h in history]
    hist_path.write_text(json.dumps({"history": clean, "tuning": tuning}, indent=1, sort_keys=True) + "\n")
    log_path = Path(f"{args.out}.epochs.csv")
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_ndcg5", "wall_ms"])
        for h in history:
            w.writerow([h["epoch"], f"{h['train_loss']:.8f}", f"{h['val_ndcg5']:.6f}", f"{h['wall_ms']:.1f}"])
    for h in history:
        print(f"epoch {h['epoch']} loss {h['train_loss']:.5f} val_ndcg@5 {h['val_ndcg5']:.4f} val_mrr {h['val_mrr']:.4f}")
    return cfg.to_dict(), cfg.seed, [args.corpus, args.config], [manifest_path(args.out), blob_path(args.out), hist_path]


def cmd_eval(args):
    from .evaluator import evaluate
    from .model import PathwayModel

    corpus = _load_corpus(args)
    split = chronological_split(corpus)
    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    seeds = list(range(args.seeds))
    try:
        ks = [int(k) for k in args.k.split(",") if k.strip()]
    except ValueError:
        raise UsageError("--k takes comma-separated integers") from None
    if not ks or min(ks) < 1:
        raise UsageError("--k values must be positive")
    try:
        model, _, meta = PathwayModel.load(args.checkpoint, corpus, split)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load checkpoint {args.checkpoint}: {exc}") from None
    report = evaluate(model, corpus, split, seeds=seeds, ks=ks)
    Path(args.out).write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    outputs = [args.out]
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slice", "metric", "mean", "std"])
            for row in report.rows():
                w.writerow([row[0], row[1], f"{row[2]:.6f}", f"{row[3]:.6f}"])
        outputs.append(args.csv)
    for name in report.metrics.get("all", {}):
        mu, sd = report.metrics["all"][name]
        print(f"{name} {mu:.4f} +- {sd:.4f}")
    return {"seeds": seeds, "ks": ks, "model": meta.get("config")}, None, [args.corpus, args.checkpoint + ".json", args.checkpoint + ".bin"], outputs


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pathcast", description="Community pathway prediction pipeline.")
    p.add_argument("--version", action="version", version=f"pathcast {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def common(sp, corpus=True):
        if corpus:
            sp.add_argument("corpus", help="event log (.jsonl or .csv)")
            sp.add_argument("--min-communities", type=int, default=None, help="drop videos posted in fewer communities")
        sp.add_argument("--manifest", default=None, help="run manifest path (default: <out>.manifest.json)")

    s = sub.add_parser("synth", help="generate a synthetic corpus with a planted graph")
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--truth", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    common(s, corpus=False)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="validate, deduplicate and sort an event log")
    common(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("analyze-intervals", help="inter-share interval statistics and session cutoff")
    common(s)
    s.add_argument("--out", required=True)
    s.add_argument("--c", type=float, default=3.0)
    s.add_argument("--bins", type=int, default=30)
    s.add_argument("--csv", default=None, help="optional per-bin histogram CSV")
    s.set_defaults(func=cmd_analyze)

    for name, func, helptext in (
        ("build-cig", cmd_build_cig, "build per-video influence graphs"),
        ("export-graph", cmd_export_graph, "export one video's graph as JSON or DOT"),
    ):
        s = sub.add_parser(name, help=helptext)
        common(s)
        s.add_argument("--mode", choices=MODES, default="influence")
        s.add_argument("--threshold", type=float, default=None, help="session cutoff in seconds (default: fitted)")
        s.add_argument("--c", type=float, default=3.0)
        s.add_argument("--split", choices=("train", "all"), default="train")
        s.add_argument("--seed", type=int, default=0)
        if name == "export-graph":
            s.add_argument("--out", required=True)
            s.add_argument("--video", required=True)
            s.add_argument("--format", choices=("json", "dot"), default="json")
        else:
            s.add_argument("--out-dir", required=True)
            s.add_argument("--video", default="all", help="video id or 'all'")
        s.set_defaults(func=func)

    s = sub.add_parser("train", help="train a model and write a checkpoint")
    common(s)
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True, help="checkpoint prefix")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--lr", type=float, default=None)
    s.add_argument("--dim", type=int, default=None)
    s.add_argument("--batch-size", type=int, default=None)
    s.add_argument("--cig-mode", choices=MODES, default=None)
    s.add_argument("--agg", dest="aggregation", choices=SCHEMES, default=None)
    s.add_argument("--tune", action="store_true", help="grid-search the learning rate on validation MRR first")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    common(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--csv", default=None)
    s.add_argument("--seeds", type=int, default=5, help="number of negative-sampling seeds")
    s.add_argument("--k", default="5,10", help="cutoffs, comma-separated")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("pathcast: error: a subcommand is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    t0 = time.perf_counter()
    try:
        config, seed, inputs, outputs = args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    out = getattr(args, "out", None)
    manifest = args.manifest or (f"{out}.manifest.json" if out else str(Path(args.out_dir) / "manifest.json"))
    write_manifest(manifest, args.command, argv, config, seed, inputs, outputs, time.perf_counter() - t0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
