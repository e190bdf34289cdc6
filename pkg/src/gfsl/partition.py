"""Class-level meta-partition and disjoint example pools."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import MetaDataset, masks_to_multihot

PHASES = ("meta_trn", "meta_val", "meta_tst")
MANIFEST_VERSION = 1


class InfeasiblePartition(ValueError):
    pass


@dataclass(frozen=True)
class ClassPartition:
    meta_trn: frozenset
    meta_val: frozenset
    meta_tst: frozenset

    def __post_init__(self):
        for name in PHASES:
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        if (self.meta_trn & self.meta_val) or (self.meta_trn & self.meta_tst) or (self.meta_val & self.meta_tst):
            raise ValueError("class sets must be pairwise disjoint")

    def __getitem__(self, phase):
        return getattr(self, phase)


def _rank(freq, candidates, vocab_order):
    # ascending frequency, ties by vocabulary position
    return sorted(candidates, key=lambda c: (freq[c], vocab_order[c]))


def partition_from_counts(names, per_source_counts, n_tst: int = 5, n_val: int = 3) -> ClassPartition:
    """Apply the partition rule to a class x source count table.

    ``names`` is the ordered vocabulary; ``per_source_counts`` maps each
    source to a per-class count sequence aligned with ``names``.
    """
    names = list(names)
    if n_tst < 0 or n_val < 0:
        raise ValueError("class set sizes must be non-negative")
    if n_tst + n_val >= len(names):
        raise InfeasiblePartition(
            f"n_tst + n_val = {n_tst + n_val} leaves no meta-training classes out of {len(names)}"
        )
    table = np.array([list(v) for v in per_source_counts.values()], dtype=np.int64).reshape(-1, len(names))
    freq = {n: int(table[:, i].sum()) for i, n in enumerate(names)}
    order = {n: i for i, n in enumerate(names)}
    everywhere = [n for i, n in enumerate(names) if table.shape[0] and np.all(table[:, i] > 0)]
    if len(everywhere) < n_tst:
        raise InfeasiblePartition(
            f"only {len(everywhere)} classes occur in every source; {n_tst} needed for meta-test"
        )
    tst = _rank(freq, everywhere, order)[:n_tst]
    rest = [n for n in names if n not in tst]
    val = _rank(freq, rest, order)[:n_val]
    trn = [n for n in rest if n not in val]
    return ClassPartition(frozenset(trn), frozenset(val), frozenset(tst))


def build_class_partition(ds: MetaDataset, n_tst: int = 5, n_val: int = 3) -> ClassPartition:
    """Meta-test gets the ``n_tst`` rarest classes present in every source;
    meta-val the ``n_val`` rarest of the remainder; meta-train the rest."""
    counts = {src: ds.per_source_freq[src] for src in ds.source_names}
    return partition_from_counts(ds.vocab.names, counts, n_tst=n_tst, n_val=n_val)


@dataclass(frozen=True)
class PoolFractions:
    val_reserve: float = 0.1
    tst_reserve: float = 0.2
    notfinding_split: tuple = (0.6, 0.1, 0.3)

    def __post_init__(self):
        object.__setattr__(self, "notfinding_split", tuple(float(f) for f in self.notfinding_split))
        for f in (self.val_reserve, self.tst_reserve, *self.notfinding_split):
            if not 0.0 <= f <= 1.0:
                raise ValueError(f"fractions must lie in [0, 1], got {f}")
        if self.val_reserve + self.tst_reserve >= 1.0:
            raise ValueError("val_reserve + tst_reserve must be < 1")
        if len(self.notfinding_split) != 3 or abs(sum(self.notfinding_split) - 1.0) > 1e-9:
            raise ValueError("notfinding_split must be three fractions summing to 1")

    def to_dict(self):
        return {
            "val_reserve": self.val_reserve,
            "tst_reserve": self.tst_reserve,
            "notfinding_split": list(self.notfinding_split),
        }


@dataclass(frozen=True)
class ExamplePools:
    d_meta_trn: tuple
    d_meta_val: tuple
    d_meta_tst: tuple
    fractions: PoolFractions = field(default_factory=PoolFractions)
    seed: int = 0
    dropped: tuple = ()
    warnings: tuple = ()

    def __getitem__(self, phase) -> tuple:
        return getattr(self, "d_" + phase)

    def sizes(self) -> dict:
        return {p: len(self[p]) for p in PHASES}


def _split_counts(n, val_frac, tst_frac):
    """(trn, val, tst) chunk sizes; val and tst are rounded, trn takes the rest."""
    val = int(np.floor(n * val_frac + 0.5))
    tst = int(np.floor(n * tst_frac + 0.5))
    while val + tst > n:  # rounding overflow on tiny groups
        if tst >= val:
            tst -= 1
        else:
            val -= 1
    return n - val - tst, val, tst


def build_example_pools(ds: MetaDataset, cp: ClassPartition, fractions: PoolFractions | None = None,
                        seed: int = 0) -> ExamplePools:
    """Assign every example to exactly one phase pool.

    Examples with a meta-test label go to the test pool, otherwise those
    with a meta-val label go to the validation pool. Examples labelled only
    with meta-train classes are shuffled and split: ``val_reserve`` and
    ``tst_reserve`` of them go to the validation and test pools so seen
    classes have positives at evaluation time. Not-finding examples are
    shuffled and split by ``notfinding_split`` (train, val, test).
    """
    fractions = fractions or PoolFractions()
    vocab = ds.vocab
    tst_bits = np.uint64(vocab.encode(cp.meta_tst))
    val_bits = np.uint64(vocab.encode(cp.meta_val))
    m = ds.masks
    is_tst = (m & tst_bits) != 0
    is_val = ~is_tst & ((m & val_bits) != 0)
    is_nf = m == 0
    is_trn_only = ~is_tst & ~is_val & ~is_nf

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    out = {p: [np.flatnonzero(mask)] for p, mask in (("meta_tst", is_tst), ("meta_val", is_val))}
    out["meta_trn"] = []
    nf_split = fractions.notfinding_split
    for group, val_frac, tst_frac in (
        (np.flatnonzero(is_trn_only), fractions.val_reserve, fractions.tst_reserve),
        (np.flatnonzero(is_nf), nf_split[1], nf_split[2]),
    ):
        n_trn, n_val, _ = _split_counts(len(group), val_frac, tst_frac)
        perm = rng.permutation(group)
        out["meta_trn"].append(perm[:n_trn])
        out["meta_val"].append(perm[n_trn:n_trn + n_val])
        out["meta_tst"].append(perm[n_trn + n_val:])

    pools = {p: np.sort(np.concatenate(v)) for p, v in out.items()}
    warnings = []
    requested = {
        "meta_trn": cp.meta_trn,
        "meta_val": cp.meta_trn | cp.meta_val,
        "meta_tst": cp.meta_trn | cp.meta_tst,
    }
    for phase in PHASES:
        rows = pools[phase]
        counts = dict(zip(vocab.names, _class_counts(ds, rows)))
        for c in sorted(requested[phase], key=vocab.bit):
            if counts[c] == 0:
                warnings.append(f"{phase} pool has no positives for class {c}")
        if not np.any(ds.masks[rows] == 0) and np.any(is_nf):
            warnings.append(f"{phase} pool has no not-finding examples")

    return ExamplePools(
        d_meta_trn=tuple(ds.ids[i] for i in pools["meta_trn"]),
        d_meta_val=tuple(ds.ids[i] for i in pools["meta_val"]),
        d_meta_tst=tuple(ds.ids[i] for i in pools["meta_tst"]),
        fractions=fractions,
        seed=int(seed),
        warnings=tuple(warnings),
    )


def _class_counts(ds, rows):
    if len(rows) == 0:
        return [0] * len(ds.vocab)
    return masks_to_multihot(ds.masks[rows], len(ds.vocab)).sum(axis=0).tolist()


def check_pools(pools: ExamplePools, cp: ClassPartition, ds: MetaDataset) -> list[str]:
    """Violations of disjointness, coverage and class purity."""
    problems = []
    sets = {p: set(pools[p]) for p in PHASES}
    for i, a in enumerate(PHASES):
        for b in PHASES[i + 1:]:
            shared = sets[a] & sets[b]
            if shared:
                problems.append(f"{a} and {b} share {len(shared)} examples")
    assigned = sum(len(pools[p]) for p in PHASES) + len(pools.dropped)
    if assigned != len(ds):
        problems.append(f"{assigned} examples assigned or dropped, dataset has {len(ds)}")
    leak = np.uint64(ds.vocab.encode(cp.meta_val | cp.meta_tst))
    rows = ds.rows(pools.d_meta_trn)
    if len(rows) and np.any(ds.masks[rows] & leak):
        problems.append("meta_trn pool contains meta_val/meta_tst labels")
    return problems


def save_manifest(path, cp: ClassPartition, pools: ExamplePools, vocab, n_tst=None, n_val=None) -> None:
    order = vocab.bit
    doc = {
        "version": MANIFEST_VERSION,
        "classes": {p: sorted(cp[p], key=order) for p in PHASES},
        "pools": {p: list(pools[p]) for p in PHASES},
        "dropped": list(pools.dropped),
        "fractions": pools.fractions.to_dict(),
        "seed": pools.seed,
        "n_tst": n_tst if n_tst is not None else len(cp.meta_tst),
        "n_val": n_val if n_val is not None else len(cp.meta_val),
        "warnings": list(pools.warnings),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_manifest(path) -> tuple[ClassPartition, ExamplePools]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported partition manifest version {doc.get('version')!r}")
    cp = ClassPartition(*(frozenset(doc["classes"][p]) for p in PHASES))
    f = doc["fractions"]
    pools = ExamplePools(
        d_meta_trn=tuple(doc["pools"]["meta_trn"]),
        d_meta_val=tuple(doc["pools"]["meta_val"]),
        d_meta_tst=tuple(doc["pools"]["meta_tst"]),
        fractions=PoolFractions(f["val_reserve"], f["tst_reserve"], tuple(f["notfinding_split"])),
        seed=int(doc["seed"]),
        dropped=tuple(doc.get("dropped", ())),
        warnings=tuple(doc.get("warnings", ())),
    )
    return cp, pools
