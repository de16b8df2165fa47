"""Corpus ingestion, splitting, featurization, and synthetic corpus generation."""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_TOKEN_RE = re.compile(r"[0-9a-z]+")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF

SYNTH_BLOCK_SIZE = 200  # tokens per label vocabulary block


class CorpusError(Exception):
    """Raised for malformed or unusable corpus files."""


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    label: str | None = None


class LabelVocab:
    """Ordered label names with a name <-> index bijection."""

    def __init__(self, names: list[str] | None = None):
        self.names: list[str] = []
        self._index: dict[str, int] = {}
        for n in names or []:
            self.add(n)

    def add(self, name: str) -> int:
        if name not in self._index:
            self._index[name] = len(self.names)
            self.names.append(name)
        return self._index[name]

    def lookup(self, name: str) -> int:
        return self._index[name]

    def name(self, index: int) -> str:
        return self.names[index]

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._index


@dataclass
class Dataset:
    documents: list[Document]
    vocab: LabelVocab
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def labeled(self) -> bool:
        return all(d.label is not None for d in self.documents)

    def label_indices(self) -> list[int]:
        return [self.vocab.lookup(d.label) for d in self.documents]


@dataclass
class FeatureVector:
    """Sparse L2-normalized hashed bag-of-words vector."""

    weights: dict[int, float]
    dim: int

    def dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        for i, w in self.weights.items():
            out[i] = w
        return out


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _U64
    return h


def _doc_from_record(record: dict, line_no: int, source: str) -> Document:
    if "text" not in record or record["text"] is None:
        raise CorpusError(f"{source}: line {line_no}: missing 'text' field")
    text = str(record["text"])
    if not text.strip():
        raise CorpusError(f"{source}: line {line_no}: empty text")
    label = record.get("label")
    if label is not None:
        label = str(label)
        if not label:
            label = None
    doc_id = str(record.get("id") or f"{Path(source).stem}-{line_no}")
    return Document(id=doc_id, text=text, label=label)


def load(path: str | Path, format: str | None = None) -> Dataset:
    """Load a JSONL or CSV corpus; vocabulary in label first-appearance order."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"no such file: {path}")
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if format not in ("jsonl", "csv"):
        raise CorpusError(f"unknown format {format!r} (expected jsonl or csv)")

    docs: list[Document] = []
    if format == "jsonl":
        with open(path, encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as e:
                    raise CorpusError(f"{path}: line {line_no}: invalid JSON: {e}") from e
                docs.append(_doc_from_record(record, line_no, str(path)))
    else:
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or "text" not in reader.fieldnames:
                raise CorpusError(f"{path}: missing 'text' column")
            for line_no, record in enumerate(reader, start=2):
                docs.append(_doc_from_record(record, line_no, str(path)))

    if not docs:
        raise CorpusError(f"{path}: empty corpus")

    seen_ids: set[str] = set()
    vocab = LabelVocab()
    for d in docs:
        if d.id in seen_ids:
            raise CorpusError(f"{path}: duplicate document id {d.id!r}")
        seen_ids.add(d.id)
        if d.label is not None:
            vocab.add(d.label)
    return Dataset(documents=docs, vocab=vocab, provenance=str(path))


def save_jsonl(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for d in ds.documents:
            record: dict = {"id": d.id, "text": d.text}
            if d.label is not None:
                record["label"] = d.label
            f.write(json.dumps(record, sort_keys=True) + "\n")


def split(ds: Dataset, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle, then 80/10/10 with remainders going to the training split."""
    if not ds.labeled:
        raise ValueError("split requires a fully labeled dataset")
    n = len(ds)
    if n < 10:
        raise ValueError(f"split requires at least 10 documents, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_val = n // 10
    n_test = n // 10
    n_train = n - n_val - n_test
    shuffled = [ds.documents[i] for i in order]
    mk = lambda docs, tag: Dataset(docs, ds.vocab, f"{ds.provenance}#{tag}(seed={seed})")
    return (
        mk(shuffled[:n_train], "train"),
        mk(shuffled[n_train : n_train + n_val], "val"),
        mk(shuffled[n_train + n_val :], "test"),
    )


def featurize(text: str, dim: int) -> FeatureVector:
    """Hashed bag of words: lowercase, alnum tokens, FNV-1a 64 mod dim, L2-normalized."""
    if dim < 2 or dim & (dim - 1) != 0:
        raise ValueError(f"dim must be a power of two >= 2, got {dim}")
    counts: dict[int, float] = {}
    for token in _TOKEN_RE.findall(text.lower()):
        idx = fnv1a64(token.encode("utf-8")) % dim
        counts[idx] = counts.get(idx, 0.0) + 1.0
    norm = np.sqrt(sum(w * w for w in counts.values()))
    if norm > 0:
        counts = {i: w / norm for i, w in counts.items()}
    return FeatureVector(weights=counts, dim=dim)


def feature_matrix(docs: list[Document], dim: int) -> np.ndarray:
    out = np.zeros((len(docs), dim))
    for row, d in enumerate(docs):
        for i, w in featurize(d.text, dim).weights.items():
            out[row, i] = w
    return out


def synth_generate(
    n_per_label: int,
    labels: int,
    overlap: float,
    doc_len: int = 50,
    seed: int = 0,
) -> tuple[Dataset, Dataset]:
    """Two-domain synthetic corpus: one vocabulary block per in-distribution label
    plus an OOD block sharing a fraction ``overlap`` of tokens with the union of
    the in-distribution blocks.  OOD documents carry no labels.
    """
    if labels < 2:
        raise ValueError(f"need at least 2 labels, got {labels}")
    if not 0.0 <= overlap <= 1.0:
        raise ValueError(f"overlap must be in [0, 1], got {overlap}")
    if n_per_label < 1 or doc_len < 1:
        raise ValueError("n_per_label and doc_len must be positive")

    rng = np.random.default_rng(seed)
    blocks = [
        [f"ind{l}tok{i}" for i in range(SYNTH_BLOCK_SIZE)] for l in range(labels)
    ]
    ind_union = [t for block in blocks for t in block]

    n_shared = int(round(overlap * SYNTH_BLOCK_SIZE))
    shared = [ind_union[i] for i in rng.choice(len(ind_union), size=n_shared, replace=False)]
    fresh = [f"oodtok{i}" for i in range(SYNTH_BLOCK_SIZE - n_shared)]
    ood_block = shared + fresh

    vocab = LabelVocab([f"label{l}" for l in range(labels)])
    ind_docs: list[Document] = []
    for l in range(labels):
        block = blocks[l]
        for k in range(n_per_label):
            tokens = [block[i] for i in rng.integers(0, len(block), size=doc_len)]
            ind_docs.append(
                Document(id=f"ind-{l}-{k}", text=" ".join(tokens), label=f"label{l}")
            )

    ood_docs: list[Document] = []
    for k in range(n_per_label * labels):
        tokens = [ood_block[i] for i in rng.integers(0, len(ood_block), size=doc_len)]
        ood_docs.append(Document(id=f"ood-{k}", text=" ".join(tokens)))

    tag = f"synth(seed={seed},labels={labels},n={n_per_label},overlap={overlap})"
    return (
        Dataset(ind_docs, vocab, tag + "#in_dist"),
        Dataset(ood_docs, LabelVocab(), tag + "#ood"),
    )
