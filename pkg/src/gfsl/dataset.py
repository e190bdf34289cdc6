"""Multi-label metadata: vocabulary, ingestion and label statistics.

Labels are stored as one ``uint64`` bitmask per example (bit ``i`` set when
the example carries vocabulary class ``i``), so the vocabulary is limited
to 64 classes. An all-zero mask is a *not finding* example.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAX_CLASSES = 64


class IngestError(ValueError):
    """Raised for metadata that cannot be turned into a dataset."""


class MetadataParseError(IngestError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class PathologyVocab:
    """Ordered, immutable list of class names with a name -> index map."""

    def __init__(self, names: Iterable[str]):
        names = tuple(str(n) for n in names)
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate class names in vocabulary: {dup}")
        if len(names) > MAX_CLASSES:
            raise ValueError(f"vocabulary limited to {MAX_CLASSES} classes, got {len(names)}")
        self.names = names
        self.index = {n: i for i, n in enumerate(names)}

    @classmethod
    def load(cls, path) -> "PathologyVocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line.strip() for line in lines if line.strip())

    def save(self, path) -> None:
        Path(path).write_text("".join(n + "\n" for n in self.names), encoding="utf-8")

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, name) -> bool:
        return name in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, PathologyVocab) and self.names == other.names

    def __repr__(self) -> str:
        return f"PathologyVocab({list(self.names)!r})"

    def bit(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise KeyError(f"unknown class {name!r}") from None

    def encode(self, names: Iterable[str]) -> int:
        mask = 0
        for n in names:
            mask |= 1 << self.bit(n)
        return mask

    def decode(self, mask: int) -> list[str]:
        mask = int(mask)
        return [n for i, n in enumerate(self.names) if mask >> i & 1]

    def mask_of(self, names: Iterable[str]) -> int:
        return self.encode(names)


@dataclass(frozen=True)
class ExampleRecord:
    id: str
    source: str
    age: int
    labels: np.ndarray
    embedding: np.ndarray | None = None


def masks_to_multihot(masks: np.ndarray, n_classes: int) -> np.ndarray:
    """Expand bitmasks into an ``(n, n_classes)`` 0/1 matrix."""
    masks = np.asarray(masks, dtype=np.uint64)
    shifts = np.arange(n_classes, dtype=np.uint64)
    return ((masks[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.int8)


def multihot_to_masks(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    weights = np.uint64(1) << np.arange(labels.shape[1], dtype=np.uint64)
    return (labels.astype(np.uint64) * weights[None, :]).sum(axis=1, dtype=np.uint64)


class MetaDataset:
    """Column-oriented, read-only collection of labelled examples.

    Parameters
    ----------
    vocab : PathologyVocab
    ids : sequence of str
        Unique example identifiers.
    sources : sequence of str
        Contributing dataset of each example.
    ages : sequence of int
    masks : array of uint64
        Label bitmask per example.
    embeddings : array, optional
        ``(n, D)`` feature matrix aligned with ``ids``.
    """

    def __init__(self, vocab, ids, sources, ages, masks, embeddings=None):
        self.vocab = vocab
        self.ids = list(ids)
        n = len(self.ids)
        self.sources = np.asarray(sources, dtype=object).reshape(n)
        self.ages = np.asarray(ages, dtype=np.int64).reshape(n)
        self.masks = np.asarray(masks, dtype=np.uint64).reshape(n)
        if len(set(self.ids)) != n:
            raise IngestError("duplicate example ids")
        if n and int(np.bitwise_or.reduce(self.masks)) >> len(vocab):
            raise IngestError("label bits outside the vocabulary")
        if embeddings is not None:
            embeddings = np.asarray(embeddings, dtype=np.float64)
            if embeddings.ndim != 2 or embeddings.shape[0] != n:
                raise IngestError(f"embedding table shape {embeddings.shape} does not match {n} examples")
        self.embeddings = embeddings
        for arr in (self.ages, self.masks):
            arr.setflags(write=False)
        if self.embeddings is not None:
            self.embeddings.setflags(write=False)
        self._row = {id_: i for i, id_ in enumerate(self.ids)}
        self.source_names = tuple(sorted(set(self.sources.tolist())))
        self.freq = self._count(self.masks)
        self.per_source_freq = {
            src: self._count(self.masks[self.sources == src]) for src in self.source_names
        }

    def _count(self, masks):
        if len(masks) == 0:
            return np.zeros(len(self.vocab), dtype=np.int64)
        return masks_to_multihot(masks, len(self.vocab)).sum(axis=0, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i) -> ExampleRecord:
        if isinstance(i, str):
            i = self._row[i]
        emb = None if self.embeddings is None else self.embeddings[i]
        return ExampleRecord(
            id=self.ids[i],
            source=str(self.sources[i]),
            age=int(self.ages[i]),
            labels=masks_to_multihot(self.masks[i : i + 1], len(self.vocab))[0],
            embedding=emb,
        )

    def rows(self, ids: Iterable[str]) -> np.ndarray:
        return np.fromiter((self._row[i] for i in ids), dtype=np.int64)

    @property
    def labels(self) -> np.ndarray:
        return masks_to_multihot(self.masks, len(self.vocab))

    @property
    def dim(self) -> int | None:
        return None if self.embeddings is None else self.embeddings.shape[1]

    def with_embeddings(self, embeddings) -> "MetaDataset":
        return MetaDataset(self.vocab, self.ids, self.sources, self.ages, self.masks, embeddings)

    @classmethod
    def from_records(cls, vocab, records: Sequence[ExampleRecord]) -> "MetaDataset":
        masks = multihot_to_masks(np.array([r.labels for r in records]).reshape(len(records), len(vocab)))
        emb = None
        if records and records[0].embedding is not None:
            emb = np.array([r.embedding for r in records], dtype=np.float64)
        return cls(vocab, [r.id for r in records], [r.source for r in records],
                   [r.age for r in records], masks, emb)

    @classmethod
    def from_counts(cls, vocab, per_source_counts: dict) -> "MetaDataset":
        """Single-label dataset reproducing a class x source count table.

        ``per_source_counts`` maps source name to a per-class count sequence
        (or a ``{class name: count}`` dict). Each label instance becomes its
        own example; useful for tabulated fixtures where co-occurrence is
        unknown.
        """
        ids, sources, masks = [], [], []
        for src, counts in per_source_counts.items():
            if isinstance(counts, dict):
                counts = [counts.get(n, 0) for n in vocab.names]
            for c, k in enumerate(counts):
                k = int(k)
                ids.extend(f"{src}:{vocab.names[c]}:{j}" for j in range(k))
                sources.extend([src] * k)
                masks.append(np.full(k, 1 << c, dtype=np.uint64))
        masks = np.concatenate(masks) if masks else np.zeros(0, dtype=np.uint64)
        return cls(vocab, ids, sources, np.zeros(len(ids), dtype=np.int64), masks)


@dataclass(frozen=True)
class DatasetStats:
    n_examples: int
    n_multilabeled: int
    n_normal: int
    n_label_instances: int
    label_cardinality: float
    label_density: float
    cooccurrence: np.ndarray = field(repr=False)

    def to_dict(self, vocab=None) -> dict:
        d = {
            "n_examples": self.n_examples,
            "n_multilabeled": self.n_multilabeled,
            "n_normal": self.n_normal,
            "n_label_instances": self.n_label_instances,
            "label_cardinality": self.label_cardinality,
            "label_density": self.label_density,
            "cooccurrence": self.cooccurrence.tolist(),
        }
        if vocab is not None:
            d["classes"] = list(vocab.names)
        return d


def compute_stats(ds: MetaDataset, cardinality_over: str = "labeled") -> DatasetStats:
    """Label statistics of a dataset.

    ``cardinality_over="labeled"`` averages the label count over examples
    with at least one label; ``"all"`` averages over every example,
    not-finding included. Density is cardinality over vocabulary size.
    """
    if len(ds) == 0:
        raise ValueError("cannot compute statistics of an empty dataset")
    if cardinality_over not in ("labeled", "all"):
        raise ValueError(f"cardinality_over must be 'labeled' or 'all', got {cardinality_over!r}")
    y = ds.labels.astype(np.int64)
    per_example = y.sum(axis=1)
    n_instances = int(per_example.sum())
    n_labeled = int(np.count_nonzero(per_example))
    denom = n_labeled if cardinality_over == "labeled" else len(ds)
    card = n_instances / denom if denom else 0.0
    return DatasetStats(
        n_examples=len(ds),
        n_multilabeled=n_labeled,
        n_normal=len(ds) - n_labeled,
        n_label_instances=n_instances,
        label_cardinality=card,
        label_density=card / len(ds.vocab),
        cooccurrence=y.T @ y,
    )


def class_frequency(ds: MetaDataset, c) -> int:
    """Number of examples labelled with class ``c`` (name or index)."""
    if isinstance(c, str):
        c = ds.vocab.bit(c)
    if not 0 <= int(c) < len(ds.vocab):
        raise KeyError(f"class index {c} outside vocabulary")
    return int(ds.freq[int(c)])


def _infer_vocab(path) -> PathologyVocab:
    names: dict[str, None] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            for n in (row.get("labels") or "").split("|"):
                if n.strip():
                    names.setdefault(n.strip(), None)
    return PathologyVocab(names)


def ingest_metadata(path, vocab=None, min_age: int | None = 10, max_age: int | None = 80,
                    embeddings=None) -> MetaDataset:
    """Read a metadata CSV with header ``id,source,age,labels``.

    ``labels`` holds ``|``-separated class names; empty means not finding.
    Ages outside ``[min_age, max_age]`` are dropped (inclusive bounds; pass
    ``None`` to disable a bound). ``vocab`` may be a :class:`PathologyVocab`
    or a path to a vocabulary file; when omitted, classes are indexed by
    first appearance in the file. ``embeddings`` may be a path accepted by
    :func:`load_embeddings`.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if vocab is None:
        vocab = _infer_vocab(path)
    elif not isinstance(vocab, PathologyVocab):
        vocab = PathologyVocab.load(vocab)

    ids, sources, ages, masks = [], [], [], []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MetadataParseError(1, "empty file") from None
        if [h.strip() for h in header] != ["id", "source", "age", "labels"]:
            raise MetadataParseError(1, f"expected header id,source,age,labels, got {','.join(header)}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 4:
                raise MetadataParseError(line, f"expected 4 fields, got {len(row)}")
            id_, source, age_s, label_s = (f.strip() for f in row)
            if not id_:
                raise MetadataParseError(line, "empty id")
            try:
                age = int(age_s)
            except ValueError:
                raise MetadataParseError(line, f"age {age_s!r} is not an integer") from None
            names = [n.strip() for n in label_s.split("|") if n.strip()] if label_s else []
            unknown = [n for n in names if n not in vocab]
            if unknown:
                raise MetadataParseError(line, f"unknown class name(s) {unknown}")
            if id_ in seen:
                raise IngestError(f"line {line}: duplicate id {id_!r}")
            seen.add(id_)
            if (min_age is not None and age < min_age) or (max_age is not None and age > max_age):
                continue
            ids.append(id_)
            sources.append(source)
            ages.append(age)
            masks.append(vocab.encode(names))

    emb = None
    if embeddings is not None:
        emb_ids, table = load_embeddings(embeddings)
        row_of = {id_: r for r, id_ in enumerate(emb_ids)}
        if len(row_of) != len(emb_ids):
            raise IngestError("duplicate ids in embedding file")
        missing = [i for i in ids if i not in row_of]
        if missing:
            raise IngestError(f"{len(missing)} examples have no embedding, e.g. {missing[0]!r}")
        emb = table[[row_of[i] for i in ids]]
    return MetaDataset(vocab, ids, sources, ages, np.array(masks, dtype=np.uint64), emb)


def load_embeddings(path) -> tuple[list[str], np.ndarray]:
    """Read ``id,v0,...,v{D-1}`` CSV or an ``.npz`` with ``ids`` and ``values``."""
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as z:
            return [str(i) for i in z["ids"]], np.asarray(z["values"], dtype=np.float64)
    ids, rows = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "id":
            raise MetadataParseError(1, "embedding header must start with 'id'")
        dim = len(header) - 1
        for row in reader:
            if not row:
                continue
            if len(row) != dim + 1:
                raise MetadataParseError(reader.line_num, f"expected {dim + 1} fields, got {len(row)}")
            ids.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise MetadataParseError(reader.line_num, str(exc)) from None
    return ids, np.array(rows, dtype=np.float64).reshape(len(ids), dim)


def save_embeddings(path, ids, values) -> None:
    path = Path(path)
    values = np.asarray(values, dtype=np.float64)
    if path.suffix == ".npz":
        np.savez(path, ids=np.asarray(ids, dtype=str), values=values)
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *(f"v{j}" for j in range(values.shape[1]))])
        for id_, row in zip(ids, values):
            w.writerow([id_, *(repr(float(v)) for v in row)])


def write_metadata(path, ds: MetaDataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "source", "age", "labels"])
        for i in range(len(ds)):
            w.writerow([ds.ids[i], ds.sources[i], int(ds.ages[i]), "|".join(ds.vocab.decode(ds.masks[i]))])
