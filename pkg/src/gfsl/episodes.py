"""Multi-label generalized few-shot episodes.

An episode mixes *seen* classes (drawn from the meta-training classes) with
*unseen* ones (drawn from the class set of the current phase). Its train
and test splits are filled class by class, rarest first, topping each class
up to ``k`` positives only when co-occurring labels have not already
supplied them, and each split closes with a not-finding example so every
class has a negative.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .dataset import MetaDataset, masks_to_multihot
from .partition import ClassPartition, ExamplePools

PHASE_KEYS = {"meta-train": "meta_trn", "meta-val": "meta_val", "meta-test": "meta_tst"}


class InvalidSpec(ValueError):
    pass


class EpisodeInfeasible(RuntimeError):
    """The phase pool cannot supply the positives an episode needs."""

    def __init__(self, cls, needed, available, split=None, index=None):
        self.cls = cls
        self.needed = needed
        self.available = available
        self.split = split
        self.index = index
        where = f" in {split} split" if split else ""
        at = f"episode {index}: " if index is not None else ""
        super().__init__(f"{at}class {cls!r} needs {needed} more examples{where}, only {available} available")


@dataclass(frozen=True)
class EpisodeSpec:
    n_seen: int
    n_unseen: int
    k_trn: int
    k_tst: int
    phase: str = "meta-test"
    n_notfinding: int = 1

    def __post_init__(self):
        if self.phase not in PHASE_KEYS:
            raise InvalidSpec(f"phase must be one of {sorted(PHASE_KEYS)}, got {self.phase!r}")
        if self.n_seen < 0 or self.n_unseen < 0 or self.n_seen + self.n_unseen < 1:
            raise InvalidSpec("need n_seen + n_unseen >= 1 with both non-negative")
        if self.k_trn < 1 or self.k_tst < 1:
            raise InvalidSpec("k_trn and k_tst must be >= 1")
        if self.phase == "meta-train" and self.n_unseen != 0:
            raise InvalidSpec("meta-train episodes have no unseen classes")
        if self.n_notfinding < 0:
            raise InvalidSpec("n_notfinding must be >= 0")

    @property
    def n_way(self) -> int:
        return self.n_seen + self.n_unseen

    @classmethod
    def from_way(cls, n_way, n_unseen, k_trn, k_tst, phase="meta-test", n_notfinding=1):
        return cls(n_way - n_unseen, n_unseen, k_trn, k_tst, phase, n_notfinding)


@dataclass(frozen=True, eq=False)
class Episode:
    classes: tuple
    seen: tuple
    class_bits: tuple
    class_freq: tuple
    trn_ids: tuple
    tst_ids: tuple
    trn_masks: np.ndarray
    tst_masks: np.ndarray
    spec: EpisodeSpec
    seed: int
    trn_rows: np.ndarray | None = None
    tst_rows: np.ndarray | None = None
    trace: tuple = field(default=(), repr=False)

    @property
    def n_way(self) -> int:
        return len(self.classes)

    @property
    def seen_mask(self) -> np.ndarray:
        return np.array(self.seen, dtype=bool)

    def _view(self, masks):
        if len(masks) == 0:
            return np.zeros((0, self.n_way), dtype=np.int8)
        full = masks_to_multihot(masks, max(self.class_bits) + 1)
        return full[:, list(self.class_bits)]

    @property
    def y_trn(self) -> np.ndarray:
        """Train labels restricted to the episode classes, in class order."""
        return self._view(self.trn_masks)

    @property
    def y_tst(self) -> np.ndarray:
        return self._view(self.tst_masks)

    def features(self, ds: MetaDataset):
        """``(x_trn, x_tst)`` feature matrices looked up in ``ds``."""
        if ds.embeddings is None:
            raise ValueError("dataset has no feature vectors")
        trn = self.trn_rows if self.trn_rows is not None else ds.rows(self.trn_ids)
        tst = self.tst_rows if self.tst_rows is not None else ds.rows(self.tst_ids)
        return ds.embeddings[trn], ds.embeddings[tst]

    def to_dict(self) -> dict:
        ytr, yts = self.y_trn, self.y_tst
        return {
            "classes": [{"name": c, "seen": bool(s), "freq": int(f)}
                        for c, s, f in zip(self.classes, self.seen, self.class_freq)],
            "trn": [{"id": i, "labels": y.tolist()} for i, y in zip(self.trn_ids, ytr)],
            "tst": [{"id": i, "labels": y.tolist()} for i, y in zip(self.tst_ids, yts)],
            "seed": int(self.seed),
            "spec": asdict(self.spec),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: dict, ds: MetaDataset | None = None) -> "Episode":
        """Rebuild an episode; full label masks come from ``ds`` when given,
        otherwise from the restricted labels (bit ``i`` = episode class ``i``)."""
        names = tuple(c["name"] for c in doc["classes"])
        seen = tuple(bool(c["seen"]) for c in doc["classes"])
        spec = EpisodeSpec(**doc["spec"])
        trn_ids = tuple(e["id"] for e in doc["trn"])
        tst_ids = tuple(e["id"] for e in doc["tst"])
        if ds is not None:
            bits = tuple(ds.vocab.bit(c) for c in names)
            trn_rows, tst_rows = ds.rows(trn_ids), ds.rows(tst_ids)
            trn_m, tst_m = ds.masks[trn_rows], ds.masks[tst_rows]
            freq = tuple(int(ds.freq[b]) for b in bits)
        else:
            bits = tuple(range(len(names)))
            trn_rows = tst_rows = None
            w = np.uint64(1) << np.arange(len(names), dtype=np.uint64)

            def masks(split):
                y = np.array([e["labels"] for e in split], dtype=np.uint64).reshape(len(split), len(names))
                return (y * w).sum(axis=1, dtype=np.uint64)

            trn_m, tst_m = masks(doc["trn"]), masks(doc["tst"])
            freq = tuple(int(c.get("freq", 0)) for c in doc["classes"])
        return cls(names, seen, bits, freq, trn_ids, tst_ids, trn_m, tst_m, spec,
                   int(doc["seed"]), trn_rows, tst_rows)


def derive_seed(master_seed: int, index: int) -> int:
    """64-bit per-episode seed, a pure function of ``(master_seed, index)``."""
    state = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),)).generate_state(1, np.uint64)
    return int(state[0])


class EpisodeSampler:
    """Draws episodes for one dataset + partition + pools combination.

    The constructor resolves pool ids to dataset rows once so repeated
    draws only pay for the sampling itself.
    """

    def __init__(self, ds: MetaDataset, cp: ClassPartition, pools: ExamplePools):
        self.ds = ds
        self.cp = cp
        self.pools = pools
        self.pool_rows = {key: ds.rows(pools[key]) for key in PHASE_KEYS.values()}
        bit = ds.vocab.bit
        self.class_sets = {key: sorted(cp[key], key=bit) for key in PHASE_KEYS.values()}

    def _order(self, names):
        bit = self.ds.vocab.bit
        return sorted(names, key=lambda c: (int(self.ds.freq[bit(c)]), bit(c)))

    def unseen_source(self, phase):
        return [] if phase == "meta-train" else self.class_sets[PHASE_KEYS[phase]]

    def generate(self, spec: EpisodeSpec, seed: int, index=None) -> Episode:
        seen_from = self.class_sets["meta_trn"]
        unseen_from = self.unseen_source(spec.phase)
        if spec.n_seen > len(seen_from):
            raise InvalidSpec(f"n_seen={spec.n_seen} exceeds {len(seen_from)} meta-train classes")
        if spec.n_unseen > len(unseen_from):
            raise InvalidSpec(f"n_unseen={spec.n_unseen} exceeds {len(unseen_from)} {spec.phase} classes")

        rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
        seen = self._order(rng.choice(seen_from, spec.n_seen, replace=False).tolist()) if spec.n_seen else []
        unseen = self._order(rng.choice(unseen_from, spec.n_unseen, replace=False).tolist()) if spec.n_unseen else []
        kernel_seed = int(rng.integers(0, 2**64, dtype=np.uint64))

        classes = seen + unseen
        vocab = self.ds.vocab
        bits = [vocab.bit(c) for c in classes]
        allowed = vocab.encode(classes)
        pool = self.pool_rows[PHASE_KEYS[spec.phase]]
        trn, tst, present, failure = _kernels.draw_episode(
            self.ds.masks, pool, allowed, np.array(bits, dtype=np.int32),
            spec.k_trn, spec.k_tst, spec.n_notfinding, kernel_seed,
        )
        if failure is not None:
            split, pos, needed, available = failure
            name = "not finding" if pos < 0 else classes[pos]
            raise EpisodeInfeasible(name, needed, available, ("trn", "tst")[split], index)

        trace = tuple(
            (split, c, int(present[s, i]), max(0, k - int(present[s, i])))
            for s, (split, k) in enumerate((("trn", spec.k_trn), ("tst", spec.k_tst)))
            for i, c in enumerate(classes)
        )
        ids = self.ds.ids
        return Episode(
            classes=tuple(classes),
            seen=tuple([True] * len(seen) + [False] * len(unseen)),
            class_bits=tuple(bits),
            class_freq=tuple(int(self.ds.freq[b]) for b in bits),
            trn_ids=tuple(ids[r] for r in trn),
            tst_ids=tuple(ids[r] for r in tst),
            trn_masks=self.ds.masks[trn],
            tst_masks=self.ds.masks[tst],
            spec=spec,
            seed=int(seed),
            trn_rows=trn,
            tst_rows=tst,
            trace=trace,
        )

    def stream(self, spec: EpisodeSpec, master_seed: int, count: int, start: int = 0):
        if count < 1:
            raise ValueError("count must be >= 1")
        for i in range(start, start + count):
            yield self.generate(spec, derive_seed(master_seed, i), index=i)


def generate_episode(ds: MetaDataset, cp: ClassPartition, pools: ExamplePools, spec: EpisodeSpec,
                     seed: int) -> Episode:
    return EpisodeSampler(ds, cp, pools).generate(spec, seed)


def episode_stream(ds: MetaDataset, cp: ClassPartition, pools: ExamplePools, spec: EpisodeSpec,
                   master_seed: int, count: int):
    """Yield ``count`` episodes; episode ``i`` uses ``derive_seed(master_seed, i)``."""
    return EpisodeSampler(ds, cp, pools).stream(spec, master_seed, count)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


def validate_episode(ep: Episode, spec: EpisodeSpec | None = None) -> list[Violation]:
    """Every episode invariant the episode breaks; empty when valid."""
    spec = spec or ep.spec
    out = []
    trn, tst = list(ep.trn_ids), list(ep.tst_ids)
    shared = set(trn) & set(tst)
    if shared:
        out.append(Violation("disjoint", f"{len(shared)} examples in both splits, e.g. {sorted(shared)[0]!r}"))
    for name, ids in (("trn", trn), ("tst", tst)):
        if len(set(ids)) != len(ids):
            out.append(Violation("duplicate", f"{name} split repeats an example"))
    if len(ep.trn_masks) != len(trn) or len(ep.tst_masks) != len(tst):
        out.append(Violation("shape", "label rows do not match example ids"))
        return out

    allowed = 0
    for b in ep.class_bits:
        allowed |= 1 << b
    off = np.uint64(~allowed & (2**64 - 1))
    for name, masks in (("trn", ep.trn_masks), ("tst", ep.tst_masks)):
        bad = int(np.count_nonzero(masks & off))
        if bad:
            out.append(Violation("foreign-label", f"{bad} {name} examples carry labels outside the episode classes"))

    n_seen = sum(ep.seen)
    if n_seen != spec.n_seen or len(ep.classes) - n_seen != spec.n_unseen:
        out.append(Violation("class-count", f"episode has {n_seen} seen / {len(ep.classes) - n_seen} unseen, "
                                            f"spec asks {spec.n_seen} / {spec.n_unseen}"))
    if list(ep.seen) != sorted(ep.seen, reverse=True):
        out.append(Violation("class-order", "seen classes must precede unseen classes"))
    for flag in (True, False):
        f = [fr for fr, s in zip(ep.class_freq, ep.seen) if s == flag]
        if f != sorted(f):
            out.append(Violation("class-order", f"{'seen' if flag else 'unseen'} classes not in increasing frequency"))
    if len(set(ep.classes)) != len(ep.classes):
        out.append(Violation("class-count", "repeated episode class"))

    for name, masks, k in (("trn", ep.trn_masks, spec.k_trn), ("tst", ep.tst_masks, spec.k_tst)):
        for c, b in zip(ep.classes, ep.class_bits):
            have = int(np.count_nonzero(masks & np.uint64(1 << b)))
            if have < k:
                out.append(Violation(f"k_{name}", f"class {c!r} has {have} positives in {name}, needs {k}"))
        nf = int(np.count_nonzero(masks == 0))
        if nf < spec.n_notfinding:
            out.append(Violation(f"notfinding-{name}",
                                 f"{name} split has {nf} not-finding examples, needs {spec.n_notfinding}"))
    return out


def write_episodes(path, episodes) -> int:
    """Write one JSON episode per line; returns the count."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(ep.to_json() + "\n")
            n += 1
    return n


def read_episodes(path, ds: MetaDataset | None = None):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield Episode.from_dict(json.loads(line), ds)
