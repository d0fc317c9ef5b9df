"""Inter-share interval distributions and the session cutoff derived from them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .events import PostingInstance


@dataclass(frozen=True)
class IntervalSample:
    values: tuple[float, ...]
    scale: str = "linear"

    def __len__(self) -> int:
        return len(self.values)

    def log10(self) -> np.ndarray:
        """Log10 of the intervals, zero gaps clamped to one second."""
        if self.scale == "log10":
            return np.asarray(self.values, dtype=np.float64)
        return np.log10(np.maximum(np.asarray(self.values, dtype=np.float64), 1.0))


@dataclass(frozen=True)
class GaussianFit:
    mu: float
    sigma: float
    n: int


def same_user_intervals(seq: Sequence[PostingInstance]) -> IntervalSample:
    """Gaps between consecutive shares of the video by the same user, pooled over users."""
    last: dict[str, int] = {}
    out = []
    for ev in seq:
        prev = last.get(ev.user_id)
        if prev is not None:
            out.append(float(ev.timestamp - prev))
        last[ev.user_id] = ev.timestamp
    return IntervalSample(tuple(out))


def diff_user_intervals(seq: Sequence[PostingInstance]) -> IntervalSample:
    """Gaps between the first shares of consecutive distinct users."""
    first: dict[str, int] = {}
    for ev in seq:
        first.setdefault(ev.user_id, ev.timestamp)
    times = sorted(first.values())
    return IntervalSample(tuple(float(b - a) for a, b in zip(times, times[1:])))


def pool(samples: Iterable[IntervalSample]) -> IntervalSample:
    vals: list[float] = []
    for s in samples:
        vals.extend(s.values)
    return IntervalSample(tuple(vals))


def fit_log_gaussian(samples: IntervalSample) -> GaussianFit:
    """Moments of log10(max(gap, 1)); sigma is the population standard deviation."""
    x = samples.log10()
    if x.size < 2:
        raise ValueError(f"need at least 2 intervals to fit, got {x.size}")
    return GaussianFit(mu=float(x.mean()), sigma=float(x.std()), n=int(x.size))


def threshold_seconds(fit: GaussianFit, c: float = 3.0) -> float:
    """Session cutoff 10**(mu - c*sigma) in seconds."""
    if c < 0:
        raise ValueError("c must be non-negative")
    return float(10.0 ** (fit.mu - c * fit.sigma))


def histogram(samples: IntervalSample, bins: int = 30) -> list[dict]:
    x = samples.log10()
    if x.size == 0:
        return []
    counts, edges = np.histogram(x, bins=bins)
    total = counts.sum()
    return [
        {"lo": float(lo), "hi": float(hi), "count": int(c), "fraction": float(c / total)}
        for lo, hi, c in zip(edges[:-1], edges[1:], counts)
    ]


def analyze(sequences: Iterable[Sequence[PostingInstance]], c: float = 3.0, bins: int = 30) -> dict:
    """Pool both interval kinds over ``sequences`` and report the fitted cutoff.

    Only the different-user intervals drive the fit; same-user intervals are
    reported for inspection.
    """
    diff, same = [], []
    for seq in sequences:
        diff.append(diff_user_intervals(seq))
        same.append(same_user_intervals(seq))
    diff_s, same_s = pool(diff), pool(same)
    fit = fit_log_gaussian(diff_s)
    thr = threshold_seconds(fit, c)
    return {
        "mu": fit.mu,
        "sigma": fit.sigma,
        "n": fit.n,
        "c": c,
        "threshold_log10": fit.mu - c * fit.sigma,
        "threshold_seconds": thr,
        "n_same_user": len(same_s),
        "same_user_log10_mean": float(same_s.log10().mean()) if len(same_s) else None,
        "histogram": histogram(diff_s, bins),
        "histogram_same_user": histogram(same_s, bins),
    }
