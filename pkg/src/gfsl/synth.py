"""Synthetic multi-label datasets with Gaussian class clusters.

Class ``c`` owns the centre ``separation / sqrt(2) * e_c`` so any two
centres are ``separation`` apart (in units of the per-dimension noise).
An example with label set ``S`` is drawn around the mean of the centres in
``S``; not-finding examples sit around the origin. Extra pure-noise
dimensions can be appended to make the task harder.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import MetaDataset, PathologyVocab


@dataclass(frozen=True)
class SynthConfig:
    n_trn_classes: int = 7
    n_val_classes: int = 3
    n_tst_classes: int = 5
    trn_count: int = 1500
    val_count: int = 300
    tst_count: int = 600
    n_notfinding: int = 1500
    separation: float = 6.0
    noise: float = 1.0
    noise_dims: int = 0
    colabel_prob: float = 0.1
    sources: tuple = ("A", "B", "C", "D")
    val_sources: tuple = ("C", "D")
    counts: tuple | None = field(default=None)

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("synthetic dataset needs at least one class")
        if self.n_classes > 64:
            raise ValueError("at most 64 classes")
        if min(self.n_trn_classes, self.n_val_classes, self.n_tst_classes) < 0:
            raise ValueError("class counts must be non-negative")
        if not 0.0 <= self.colabel_prob <= 1.0:
            raise ValueError("colabel_prob must lie in [0, 1]")
        if self.separation < 0 or self.noise < 0 or self.noise_dims < 0:
            raise ValueError("separation, noise and noise_dims must be non-negative")
        if not self.sources:
            raise ValueError("need at least one source")
        if self.counts is not None and len(self.counts) != self.n_classes:
            raise ValueError(f"counts must list {self.n_classes} per-class values")

    @property
    def n_classes(self) -> int:
        return self.n_trn_classes + self.n_val_classes + self.n_tst_classes

    @property
    def dim(self) -> int:
        return self.n_classes + self.noise_dims

    def class_counts(self) -> list[int]:
        if self.counts is not None:
            return [int(c) for c in self.counts]
        return ([self.trn_count] * self.n_trn_classes + [self.val_count] * self.n_val_classes
                + [self.tst_count] * self.n_tst_classes)

    def class_names(self) -> list[str]:
        return ([f"trn{i}" for i in range(self.n_trn_classes)] + [f"val{i}" for i in range(self.n_val_classes)]
                + [f"tst{i}" for i in range(self.n_tst_classes)])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sources"] = list(self.sources)
        d["val_sources"] = list(self.val_sources)
        d["counts"] = None if self.counts is None else list(self.counts)
        return d


def class_centres(cfg: SynthConfig) -> np.ndarray:
    centres = np.zeros((cfg.n_classes, cfg.dim))
    centres[np.arange(cfg.n_classes), np.arange(cfg.n_classes)] = cfg.separation * cfg.noise / np.sqrt(2.0)
    return centres


def make_synthetic(cfg: SynthConfig, seed: int = 0) -> MetaDataset:
    """Build a dataset whose per-class positive counts equal
    ``cfg.class_counts()`` exactly; co-labelled examples merge two slots."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    vocab = PathologyVocab(cfg.class_names())
    counts = cfg.class_counts()
    slots = np.repeat(np.arange(cfg.n_classes), counts)
    rng.shuffle(slots)

    label_sets = []
    i = 0
    while i < len(slots):
        if i + 1 < len(slots) and slots[i + 1] != slots[i] and rng.random() < cfg.colabel_prob:
            label_sets.append((int(slots[i]), int(slots[i + 1])))
            i += 2
        else:
            label_sets.append((int(slots[i]),))
            i += 1
    label_sets += [()] * cfg.n_notfinding
    order = rng.permutation(len(label_sets))
    label_sets = [label_sets[j] for j in order]

    n_val_start = cfg.n_trn_classes
    n_val_end = n_val_start + cfg.n_val_classes
    centres = class_centres(cfg)
    n = len(label_sets)
    feats = rng.normal(0.0, cfg.noise, size=(n, cfg.dim))
    masks = np.zeros(n, dtype=np.uint64)
    sources = []
    rr = {}
    for j, labels in enumerate(label_sets):
        if labels:
            feats[j] += centres[list(labels)].mean(axis=0)
            masks[j] = vocab.encode(vocab.names[c] for c in labels)
            lead = labels[0]
            is_val = any(n_val_start <= c < n_val_end for c in labels)
            allowed = cfg.val_sources if is_val and cfg.val_sources else cfg.sources
        else:
            lead, allowed = -1, cfg.sources
        k = rr.get(lead, 0)
        rr[lead] = k + 1
        sources.append(allowed[k % len(allowed)])
    ages = rng.integers(10, 81, size=n)
    ids = [f"x{j:06d}" for j in range(n)]
    return MetaDataset(vocab, ids, sources, ages, masks, feats)
