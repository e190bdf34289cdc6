"""Seen / Unseen pooled AUC-ROC, harmonic mean, and episode aggregation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

Z95 = 1.96
METRICS = ("seen", "unseen", "hm")


class UndefinedAUC(ValueError):
    pass


def auc_roc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative,
    ties counting one half (the Mann-Whitney statistic)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.shape[0]} scores for {labels.shape[0]} labels")
    auc, n_pos, n_neg = _kernels.auc_rank(scores, labels)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUC(f"AUC needs both classes, got {n_pos} positives and {n_neg} negatives")
    return float(auc)


def harmonic_mean(a: float, b: float) -> float:
    if a + b == 0:
        return 0.0
    return 2.0 * a * b / (a + b)


@dataclass(frozen=True)
class EpisodeScores:
    seen_auc: float | None
    unseen_auc: float | None
    hm: float

    def get(self, metric):
        return {"seen": self.seen_auc, "unseen": self.unseen_auc, "hm": self.hm}[metric]


def score_episode(probs, episode=None, *, y_tst=None, seen=None) -> EpisodeScores:
    """Pool every (query, class) entry of the seen classes into one binary
    task, likewise the unseen classes, and combine by harmonic mean.

    Pass an :class:`~gfsl.episodes.Episode`, or ``y_tst`` and the boolean
    ``seen`` flags directly.
    """
    if episode is not None:
        y_tst = episode.y_tst
        seen = episode.seen
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(y_tst)
    seen = np.asarray(seen, dtype=bool)
    if p.shape != y.shape or p.shape[1] != seen.shape[0]:
        raise ValueError(f"probabilities {p.shape} do not match labels {y.shape} / {seen.shape[0]} classes")
    s = auc_roc(p[:, seen], y[:, seen]) if seen.any() else None
    u = auc_roc(p[:, ~seen], y[:, ~seen]) if (~seen).any() else None
    if s is None:
        hm = u
    elif u is None:
        hm = s
    else:
        hm = harmonic_mean(s, u)
    return EpisodeScores(s, u, hm)


@dataclass
class RunningStat:
    """Welford accumulator; ``merge`` makes it a commutative monoid."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, x: float) -> None:
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def merge(self, other: "RunningStat") -> "RunningStat":
        if other.n == 0:
            return RunningStat(self.n, self.mean, self.m2)
        if self.n == 0:
            return RunningStat(other.n, other.mean, other.m2)
        n = self.n + other.n
        d = other.mean - self.mean
        return RunningStat(n, self.mean + d * other.n / n, self.m2 + other.m2 + d * d * self.n * other.n / n)

    @property
    def std(self) -> float:
        return math.sqrt(self.m2 / (self.n - 1)) if self.n > 1 else 0.0

    @property
    def half_width(self) -> float:
        return Z95 * self.std / math.sqrt(self.n) if self.n > 1 else 0.0


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    ci95: float
    n: int


@dataclass
class AggregateReport:
    metrics: dict = field(default_factory=dict)

    def __getitem__(self, metric) -> MetricSummary:
        return self.metrics[metric]

    def to_dict(self) -> dict:
        return {k: {"mean": v.mean, "ci95": v.ci95, "n": v.n} for k, v in self.metrics.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_text(self, title: str | None = None) -> str:
        """Percent values with two decimals, ``mean±half-width``."""
        lines = [title] if title else []
        header = [m.capitalize() if m != "hm" else "HM" for m in self.metrics]
        cells = [f"{100 * v.mean:.2f}±{100 * v.ci95:.2f}" for v in self.metrics.values()]
        width = max([len(c) for c in cells + header] or [0])
        lines.append("  ".join(h.rjust(width) for h in header))
        lines.append("  ".join(c.rjust(width) for c in cells))
        return "\n".join(lines)


class Aggregator:
    """Order-independent accumulation of :class:`EpisodeScores`."""

    def __init__(self):
        self.stats = {m: RunningStat() for m in METRICS}

    def add(self, scores: EpisodeScores) -> None:
        for m in METRICS:
            v = scores.get(m)
            if v is not None:
                self.stats[m].add(float(v))

    def merge(self, other: "Aggregator") -> "Aggregator":
        out = Aggregator()
        out.stats = {m: self.stats[m].merge(other.stats[m]) for m in METRICS}
        return out

    def report(self) -> AggregateReport:
        if self.stats["hm"].n == 0:
            raise ValueError("no episode scores to aggregate")
        return AggregateReport({
            m: MetricSummary(s.mean, s.half_width, s.n) for m, s in self.stats.items() if s.n
        })


def aggregate(scores) -> AggregateReport:
    """Mean and 95% normal-approximation half-width of each metric.

    HM is averaged per episode, not recomputed from the mean Seen and
    Unseen values.
    """
    agg = Aggregator()
    for s in scores:
        agg.add(s)
    return agg.report()


def write_episode_csv(path, scores, index=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "seen", "unseen", "hm"])
        for i, s in enumerate(scores):
            w.writerow([i if index is None else index[i],
                        "" if s.seen_auc is None else repr(s.seen_auc),
                        "" if s.unseen_auc is None else repr(s.unseen_auc),
                        repr(s.hm)])
