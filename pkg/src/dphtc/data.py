"""Tokenisation, vocabularies, embeddings, dataset ingestion and splits."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .taxonomy import ABSENT, Taxonomy

logger = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"

_STRIP = string.punctuation + "“”‘’«»…–—"


class DataError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip surrounding punctuation.

    >>> tokenize("USB-C Cable, 2m")
    ['usb-c', 'cable', '2m']
    """
    out = []
    for raw in text.lower().split():
        tok = raw.strip(_STRIP)
        if tok:
            out.append(tok)
    return out


@dataclass(frozen=True)
class Vocabulary:
    """Token -> id map; ids 0 and 1 are reserved for padding and unknowns."""

    tokens: tuple[str, ...]  # index == id

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def index(self) -> dict[str, int]:
        cached = self.__dict__.get("_index")
        if cached is None:
            cached = {t: i for i, t in enumerate(self.tokens)}
            object.__setattr__(self, "_index", cached)
        return cached

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    def encode(self, tokens: Iterable[str], max_len: int | None = None) -> tuple[int, ...]:
        ids = tuple(self.id(t) for t in tokens)
        return ids if max_len is None else ids[:max_len]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode()).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls(tuple(Path(path).read_text(encoding="utf-8").rstrip("\n").split("\n")))


def build_vocabulary(corpus: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Keep tokens seen at least ``min_count`` times, most frequent first.

    Ties are broken lexicographically. Raises ``DataError`` on an empty corpus.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter()
    n_docs = 0
    for doc in corpus:
        counts.update(doc)
        n_docs += 1
    if n_docs == 0 or not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary((PAD_TOKEN, UNK_TOKEN, *kept))


def load_embeddings(
    path: str | Path | None,
    vocab: Vocabulary,
    dim: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Embedding matrix for ``vocab`` from a word-vector text file.

    Rows for tokens found in the file are copied; every other row (UNK
    included) is drawn from U(-0.05, 0.05); the PAD row is zero. With
    ``path=None`` all rows are random, i.e. training from scratch.
    """
    matrix = rng.uniform(-0.05, 0.05, size=(vocab.size, dim))
    if path is not None:
        index = vocab.index
        try:
            fh = open(path, encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read embeddings {path}: {exc}") from exc
        with fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.rstrip().split(" ")
                if len(parts) < 2:
                    continue
                word, values = parts[0], parts[1:]
                if len(values) != dim:
                    if lineno == 1 and len(values) == 1:
                        continue  # "<count> <dim>" header line
                    raise DataError(f"{path}:{lineno}: vector has {len(values)} values, expected {dim}")
                row = index.get(word)
                if row is not None and row > UNK:
                    matrix[row] = np.asarray(values, dtype=np.float64)
    matrix[PAD] = 0.0
    return matrix


# -- records ---------------------------------------------------------------


@dataclass(frozen=True)
class Document:
    text: str
    labels: tuple[str, ...]  # root-to-leaf label strings
    source_id: str


@dataclass(frozen=True)
class Record:
    tokens: tuple[int, ...]
    label: tuple[int, ...]  # one node id (or ABSENT) per taxonomy level
    source_id: str

    @property
    def depth(self) -> int:
        return sum(1 for n in self.label if n != ABSENT)


@dataclass
class IngestResult:
    documents: list[Document] = field(default_factory=list)
    dropped: int = 0


def _resolve_labels(labels: Sequence[str], taxonomy: Taxonomy) -> tuple[int, ...] | None:
    if not labels:
        return None
    ids = []
    for lab in labels:
        if not taxonomy.has_label(lab):
            return None
        ids.append(taxonomy.id_of(lab))
    path = tuple(ids) + (ABSENT,) * (taxonomy.depth - len(ids))
    return path if taxonomy.validate_path(path) is None else None


def _read_jsonl(path: Path, taxonomy: Taxonomy) -> IngestResult:
    result = IngestResult()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                text, labels = obj["text"], obj["labels"]
                if not isinstance(text, str) or not isinstance(labels, list):
                    raise TypeError
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record") from exc
            source = str(obj.get("id", f"{path.stem}:{lineno}"))
            if _resolve_labels(labels, taxonomy) is None:
                result.dropped += 1
                continue
            result.documents.append(Document(text, tuple(labels), source))
    return result


def _adapt_bestbuy(path: Path, taxonomy: Taxonomy) -> IngestResult:
    # products.json: list of {"sku", "name", "manufacturer", "description", "category": [{"id", "name"}...]}
    result = IngestResult()
    try:
        products = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON at line {exc.lineno}") from exc
    for i, product in enumerate(products):
        text = " ".join(str(product.get(k) or "") for k in ("name", "manufacturer", "description")).strip()
        labels = [c["id"] for c in product.get("category", [])]
        if _resolve_labels(labels, taxonomy) is None:
            result.dropped += 1
            continue
        result.documents.append(Document(text, tuple(labels), str(product.get("sku", i))))
    return result


def _adapt_dbpedia(path: Path, taxonomy: Taxonomy) -> IngestResult:
    # CSV with header text,l1,l2,l3
    result = IngestResult()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                text = row["text"]
                labels = [row[k] for k in ("l1", "l2", "l3") if row.get(k)]
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: missing column {exc}") from exc
            if _resolve_labels(labels, taxonomy) is None:
                result.dropped += 1
                continue
            result.documents.append(Document(text, tuple(labels), f"{path.stem}:{lineno}"))
    return result


def _adapt_reuters(path: Path, taxonomy: Taxonomy) -> IngestResult:
    # JSONL of {"id", "headline", "text", "codes": [...]}; each article keeps its least frequent code.
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rows.append((lineno, obj, list(obj["codes"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record") from exc
    freq = Counter(code for _, _, codes in rows for code in codes)
    result = IngestResult()
    for lineno, obj, codes in rows:
        known = [c for c in codes if taxonomy.has_label(c)]
        if not known:
            result.dropped += 1
            continue
        code = min(known, key=lambda c: (freq[c], c))
        labels = [taxonomy.label_of(n) for n in taxonomy.path_to(taxonomy.id_of(code))]
        text = f"{obj.get('headline', '')} {obj.get('text', '')}".strip()
        result.documents.append(Document(text, tuple(labels), str(obj.get("id", lineno))))
    return result


ADAPTERS = {
    "jsonl": _read_jsonl,
    "bestbuy": _adapt_bestbuy,
    "dbpedia": _adapt_dbpedia,
    "reuters": _adapt_reuters,
}


def ingest(path: str | Path, taxonomy: Taxonomy, adapter: str = "jsonl") -> IngestResult:
    """Read labelled documents, dropping (and counting) those outside ``taxonomy``."""
    try:
        reader = ADAPTERS[adapter]
    except KeyError:
        raise DataError(f"unknown adapter {adapter!r}; choose from {sorted(ADAPTERS)}") from None
    result = reader(Path(path), taxonomy)
    if result.dropped:
        logger.info("dropped %d records with labels outside the taxonomy", result.dropped)
    return result


def emit(documents: Iterable[Document], path: str | Path) -> None:
    """Write documents in the generic JSONL format (``id``, ``text``, ``labels``)."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in documents:
            fh.write(json.dumps({"id": doc.source_id, "text": doc.text, "labels": list(doc.labels)}) + "\n")


def encode_documents(
    documents: Sequence[Document], taxonomy: Taxonomy, vocab: Vocabulary, max_len: int = 64
) -> list[Record]:
    records = []
    for doc in documents:
        path = _resolve_labels(doc.labels, taxonomy)
        if path is None:
            raise DataError(f"document {doc.source_id} has labels outside the taxonomy")
        records.append(Record(vocab.encode(tokenize(doc.text), max_len), path, doc.source_id))
    return records


def decode_records(records: Iterable[Record], taxonomy: Taxonomy, vocab: Vocabulary) -> list[Document]:
    docs = []
    for r in records:
        labels = tuple(taxonomy.label_of(n) for n in r.label if n != ABSENT)
        docs.append(Document(" ".join(vocab.decode(r.tokens)), labels, r.source_id))
    return docs


# -- synthetic corpora -----------------------------------------------------


def synth_vocabulary(vocab_size: int) -> Vocabulary:
    return Vocabulary((PAD_TOKEN, UNK_TOKEN, *(f"w{i}" for i in range(2, vocab_size))))


@dataclass(frozen=True)
class SynthSpec:
    """Knobs for :func:`synth_corpus`.

    ``topic_tokens[k]`` is the expected number of class-specific tokens a
    record carries for its level-(k+1) class; the rest of the text is noise
    drawn from a Zipf-like distribution over the leftover vocabulary.
    """

    tokens_per_node: int = 4
    topic_tokens: tuple[float, ...] = (3.0, 1.5, 1.0)
    length: tuple[int, int] = (12, 24)
    zipf_exponent: float = 1.0
    partial_depth: float = 0.0  # probability a record's label stops one level early


def synth_corpus(
    taxonomy: Taxonomy,
    n: int,
    vocab_size: int,
    seed: int,
    spec: SynthSpec = SynthSpec(),
) -> list[Record]:
    """Learnable synthetic records over ``synth_vocabulary(vocab_size)``.

    Every node owns a disjoint block of topic tokens. A record picks a leaf
    uniformly, then mixes topic tokens from each node on its path with noise
    tokens. Deterministic for a given seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    block = spec.tokens_per_node
    n_topic = len(taxonomy) * block
    n_noise = vocab_size - 2 - n_topic
    if n_noise < max(10, n_topic // 4):
        raise DataError(
            f"vocab_size {vocab_size} too small for {len(taxonomy)} nodes x {block} topic tokens plus noise"
        )
    rng = np.random.default_rng(seed)
    noise_ids = np.arange(2 + n_topic, vocab_size)
    weights = 1.0 / np.arange(1, n_noise + 1) ** spec.zipf_exponent
    weights /= weights.sum()
    leaves = [i for i, nd in enumerate(taxonomy.nodes) if not taxonomy.children(i)]

    records = []
    for r in range(n):
        leaf = leaves[rng.integers(len(leaves))]
        path = list(taxonomy.path_to(leaf))
        if spec.partial_depth > 0 and len(path) > 1 and rng.random() < spec.partial_depth:
            path = path[:-1]
        length = int(rng.integers(spec.length[0], spec.length[1] + 1))
        tokens: list[int] = []
        for k, node in enumerate(path):
            rate = spec.topic_tokens[min(k, len(spec.topic_tokens) - 1)]
            count = int(rng.poisson(rate))
            tokens.extend(int(2 + node * block + j) for j in rng.integers(block, size=count))
        fill = max(length - len(tokens), 0)
        tokens.extend(int(t) for t in rng.choice(noise_ids, size=fill, p=weights))
        tokens = [tokens[i] for i in rng.permutation(len(tokens))]
        label = tuple(path) + (ABSENT,) * (taxonomy.depth - len(path))
        records.append(Record(tuple(tokens), label, f"synth-{seed}-{r}"))
    return records


# -- splits ----------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    """Train/validation/test fractions (summing to one) or explicit counts."""

    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    counts: tuple[int, int, int] | None = None
    seed: int = 0

    def sizes(self, n: int) -> tuple[int, int, int]:
        if self.counts is not None:
            if sum(self.counts) > n:
                raise DataError(f"split counts {tuple(self.counts)} exceed {n} records")
            return tuple(int(c) for c in self.counts)
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise DataError(f"split fractions must sum to 1, got {sum(self.fractions)}")
        n_train = int(round(self.fractions[0] * n))
        n_val = min(int(round(self.fractions[1] * n)), n - n_train)
        return n_train, n_val, n - n_train - n_val


@dataclass
class Splits:
    train: list[Record]
    validation: list[Record]
    test: list[Record]


def split_records(records: Sequence[Record], spec: SplitSpec) -> Splits:
    """Disjoint train/validation/test subsets from a seeded permutation."""
    n_train, n_val, n_test = spec.sizes(len(records))
    order = np.random.default_rng(spec.seed).permutation(len(records))
    pick = [records[i] for i in order]
    return Splits(
        pick[:n_train],
        pick[n_train:n_train + n_val],
        pick[n_train + n_val:n_train + n_val + n_test],
    )
