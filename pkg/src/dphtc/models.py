"""Global hierarchical classifiers: one encoder, one softmax head per level."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import PAD, Record
from .taxonomy import ABSENT, ROOT, Taxonomy
from .tensor import Graph, ParamStore, Tensor

ENCODERS = ("bow", "cnn", "transformer")
_DEFAULT_DROPOUT = {"bow": 0.0, "cnn": 0.5, "transformer": 0.1}


@dataclass
class EncoderConfig:
    kind: str = "bow"
    embed_dim: int = 50
    # cnn
    filter_widths: tuple[int, ...] = (3, 4, 5)
    filters: int = 100
    # transformer
    layers: int = 2
    heads: int = 4
    model_dim: int = 128
    ff_dim: int = 256
    max_len: int = 256
    dropout: float | None = None  # None -> 0.5 for cnn, 0.1 for transformer

    def __post_init__(self):
        if self.kind not in ENCODERS:
            raise ValueError(f"unknown encoder kind {self.kind!r}; expected one of {ENCODERS}")
        self.filter_widths = tuple(self.filter_widths)
        if self.dropout is None:
            self.dropout = _DEFAULT_DROPOUT[self.kind]

    @property
    def min_len(self) -> int:
        return max(self.filter_widths) if self.kind == "cnn" else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filter_widths"] = list(self.filter_widths)
        return d


@dataclass
class LevelPrediction:
    probs: list[np.ndarray]  # per level, including the ABSENT column when present
    argmax: tuple[int, ...]  # node id or ABSENT per level
    path: tuple[int, ...]
    path_prob: float


def pad_batch(records: Sequence[Record], min_len: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Token ids (B, T), token mask (B, T) and effective lengths (B,).

    A record's effective length is ``max(len, min_len)``; positions beyond
    its real tokens but inside that length hold PAD and count as valid, so
    outputs never depend on how much extra padding the batch adds.
    """
    lengths = np.array([max(len(r.tokens), min_len) for r in records])
    width = int(lengths.max())
    ids = np.full((len(records), width), PAD, dtype=np.int64)
    for i, r in enumerate(records):
        ids[i, : len(r.tokens)] = r.tokens
    mask = np.arange(width)[None, :] < lengths[:, None]
    return ids, mask, lengths


def absent_levels(records: Sequence[Record], levels: int) -> tuple[bool, ...]:
    """Which of the first ``levels`` levels have records labelled only above them."""
    flags = [False] * levels
    for r in records:
        for k in range(levels):
            if r.label[k] == ABSENT:
                flags[k] = True
    return tuple(flags)


class HtcModel:
    """Encoder plus one affine + softmax head per trained level.

    Args:
        config: encoder configuration.
        taxonomy: full class tree; the first ``levels`` levels are trained.
        vocab_size: rows of the embedding table.
        levels: number of trained levels K.
        absent: per level, whether its head carries an extra ABSENT class.
        embeddings: optional initial embedding matrix (vocab_size x embed_dim).
        seed: initialisation seed.
    """

    def __init__(
        self,
        config: EncoderConfig,
        taxonomy: Taxonomy,
        vocab_size: int,
        levels: int = 3,
        absent: Sequence[bool] | None = None,
        embeddings: np.ndarray | None = None,
        seed: int = 0,
    ):
        if not 1 <= levels <= taxonomy.depth:
            raise ValueError(f"levels must be in [1, {taxonomy.depth}], got {levels}")
        self.config = config
        self.taxonomy = taxonomy
        self.vocab_size = vocab_size
        self.levels = levels
        self.absent = tuple(absent) if absent is not None else (False,) * levels
        if len(self.absent) != levels:
            raise ValueError("absent flags must have one entry per trained level")
        self.level_nodes = [taxonomy.levels[k] for k in range(levels)]
        self.column = [{node: j for j, node in enumerate(nodes)} for nodes in self.level_nodes]
        self.head_sizes = [len(nodes) + int(flag) for nodes, flag in zip(self.level_nodes, self.absent)]
        # For path resolution: column of each level-k node's parent at level k-1.
        self._parent_cols = [
            np.array([0 if k == 0 else self.column[k - 1][taxonomy.parent(n)] for n in nodes])
            for k, nodes in enumerate(self.level_nodes)
        ]
        self.store = ParamStore()
        self._init_params(np.random.default_rng(seed), embeddings)

    # -- parameters --------------------------------------------------------

    def _init_params(self, rng: np.random.Generator, embeddings: np.ndarray | None) -> None:
        cfg, s = self.config, self.store
        if embeddings is None:
            embeddings = rng.uniform(-0.05, 0.05, size=(self.vocab_size, cfg.embed_dim))
            embeddings[PAD] = 0.0
        elif embeddings.shape != (self.vocab_size, cfg.embed_dim):
            raise T.ShapeError(
                f"embeddings {embeddings.shape} != ({self.vocab_size}, {cfg.embed_dim})"
            )
        s.add("embedding", embeddings)

        if cfg.kind == "bow":
            hidden = cfg.embed_dim
        elif cfg.kind == "cnn":
            for w in cfg.filter_widths:
                fan_in = w * cfg.embed_dim
                s.add(f"conv{w}.w", T.glorot(rng, fan_in, cfg.filters, (w, cfg.embed_dim, cfg.filters)))
                s.add(f"conv{w}.b", np.zeros(cfg.filters))
            hidden = cfg.filters * len(cfg.filter_widths)
        else:
            d = cfg.model_dim
            if cfg.embed_dim != d:
                s.add("proj.w", T.glorot(rng, cfg.embed_dim, d))
                s.add("proj.b", np.zeros(d))
            s.add("position", rng.normal(0.0, 0.02, size=(cfg.max_len, d)))
            for i in range(cfg.layers):
                for name in ("q", "k", "v", "o"):
                    s.add(f"layer{i}.{name}.w", T.glorot(rng, d, d))
                    s.add(f"layer{i}.{name}.b", np.zeros(d))
                s.add(f"layer{i}.ln1.g", np.ones(d))
                s.add(f"layer{i}.ln1.b", np.zeros(d))
                s.add(f"layer{i}.ff1.w", T.glorot(rng, d, cfg.ff_dim))
                s.add(f"layer{i}.ff1.b", np.zeros(cfg.ff_dim))
                s.add(f"layer{i}.ff2.w", T.glorot(rng, cfg.ff_dim, d))
                s.add(f"layer{i}.ff2.b", np.zeros(d))
                s.add(f"layer{i}.ln2.g", np.ones(d))
                s.add(f"layer{i}.ln2.b", np.zeros(d))
            hidden = d
        self.hidden_dim = hidden
        for k, width in enumerate(self.head_sizes, start=1):
            s.add(f"head{k}.w", T.glorot(rng, hidden, width))
            s.add(f"head{k}.b", np.zeros(width))

    def head_groups(self) -> list[str]:
        return [f"head{k}.w" for k in range(1, self.levels + 1)]

    # -- forward -----------------------------------------------------------

    def encode(self, graph: Graph, records: Sequence[Record]) -> Tensor:
        """Hidden representation (B, hidden_dim) fed to every head."""
        cfg, s = self.config, self.store
        ids, mask, lengths = pad_batch(records, cfg.min_len)
        if cfg.kind == "transformer" and ids.shape[1] > cfg.max_len:
            raise T.ShapeError(f"sequence length {ids.shape[1]} exceeds positional table {cfg.max_len}")
        emb = T.embedding(graph.param(s, "embedding"), ids)

        if cfg.kind == "bow":
            return T.masked_mean(emb, mask)

        if cfg.kind == "cnn":
            pooled = []
            for w in cfg.filter_widths:
                conv = T.relu(T.conv1d(emb, graph.param(s, f"conv{w}.w"), graph.param(s, f"conv{w}.b")))
                steps = conv.shape[1]
                valid = np.arange(steps)[None, :] <= (lengths - w)[:, None]
                pooled.append(T.max_over_time(conv, valid))
            return T.dropout(T.concat(pooled, axis=-1), cfg.dropout)

        x = emb
        if cfg.embed_dim != cfg.model_dim:
            x = T.linear(graph, s, x, "proj")
        pos = graph.param(s, "position")
        x = T.add(x, T.embedding(pos, np.arange(ids.shape[1])))
        for i in range(cfg.layers):
            p = f"layer{i}"
            q = T.linear(graph, s, x, f"{p}.q")
            k = T.linear(graph, s, x, f"{p}.k")
            v = T.linear(graph, s, x, f"{p}.v")
            att = T.linear(graph, s, T.self_attention(q, k, v, cfg.heads, mask), f"{p}.o")
            x = T.layer_norm(T.add(x, T.dropout(att, cfg.dropout)),
                             graph.param(s, f"{p}.ln1.g"), graph.param(s, f"{p}.ln1.b"))
            ff = T.linear(graph, s, T.relu(T.linear(graph, s, x, f"{p}.ff1")), f"{p}.ff2")
            x = T.layer_norm(T.add(x, T.dropout(ff, cfg.dropout)),
                             graph.param(s, f"{p}.ln2.g"), graph.param(s, f"{p}.ln2.b"))
        return T.masked_mean(x, mask)

    def forward(self, graph: Graph, records: Sequence[Record]) -> list[Tensor]:
        """Per-level logits, each (B, head width)."""
        hidden = self.encode(graph, records)
        return [T.linear(graph, self.store, hidden, f"head{k}") for k in range(1, self.levels + 1)]

    def targets(self, records: Sequence[Record]) -> np.ndarray:
        """Head column per record and level; -1 where the level is masked out."""
        out = np.full((len(records), self.levels), -1, dtype=np.int64)
        for i, r in enumerate(records):
            for k in range(self.levels):
                node = r.label[k]
                if node == ABSENT:
                    if self.absent[k]:
                        out[i, k] = self.head_sizes[k] - 1
                else:
                    out[i, k] = self.column[k][node]
        return out

    def level_losses(self, graph: Graph, records: Sequence[Record]) -> list[Tensor]:
        """Per-level cross-entropy vectors (B,), zero where masked."""
        targets = self.targets(records)
        return [T.softmax_cross_entropy(lg, targets[:, k]) for k, lg in enumerate(self.forward(graph, records))]

    def loss(self, graph: Graph, records: Sequence[Record]) -> Tensor:
        """Mean over records of the summed per-level cross-entropies."""
        per_level = self.level_losses(graph, records)
        total = per_level[0]
        for extra in per_level[1:]:
            total = T.add(total, extra)
        return T.reduce_mean(total)

    # -- inference ---------------------------------------------------------

    def probabilities(self, records: Sequence[Record], batch_size: int = 256) -> list[np.ndarray]:
        """Eval-mode softmax outputs, one (N, width) array per level."""
        chunks: list[list[np.ndarray]] = [[] for _ in range(self.levels)]
        for start in range(0, len(records), batch_size):
            graph = Graph(train=False)
            for k, lg in enumerate(self.forward(graph, records[start:start + batch_size])):
                chunks[k].append(T._stable_softmax(lg.data))
        return [np.concatenate(c) for c in chunks]

    def predict(self, records: Sequence[Record], batch_size: int = 256) -> list[LevelPrediction]:
        probs = self.probabilities(records, batch_size)
        class_probs = [p[:, : len(nodes)] for p, nodes in zip(probs, self.level_nodes)]
        best_cols, best_scores = resolve_batch(class_probs, self._parent_cols)
        leaf_nodes = self.level_nodes[-1]
        out = []
        for i in range(len(records)):
            argmax = []
            for k, p in enumerate(probs):
                j = int(p[i].argmax())
                argmax.append(ABSENT if j >= len(self.level_nodes[k]) else self.level_nodes[k][j])
            path = self.taxonomy.path_to(leaf_nodes[best_cols[i]])
            out.append(LevelPrediction([p[i] for p in probs], tuple(argmax), path, float(best_scores[i])))
        return out

    # -- persistence -------------------------------------------------------

    def header(self, vocab_digest: str = "") -> dict:
        return {
            "encoder": self.config.to_dict(),
            "levels": self.levels,
            "absent": list(self.absent),
            "vocab_size": self.vocab_size,
            "taxonomy_sha256": self.taxonomy.digest(),
            "vocab_sha256": vocab_digest,
            "params": {k: list(v.shape) for k, v in self.store.params.items()},
        }

    def save(self, directory: str | Path, vocab_digest: str = "") -> None:
        """Write ``model.npz`` (parameters) and ``model.json`` (header)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.store.save(directory / "model.npz")
        (directory / "model.json").write_text(json.dumps(self.header(vocab_digest), indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory: str | Path, taxonomy: Taxonomy, vocab_digest: str | None = None) -> "HtcModel":
        directory = Path(directory)
        header = json.loads((directory / "model.json").read_text())
        if header["taxonomy_sha256"] != taxonomy.digest():
            raise ValueError("checkpoint was trained on a different taxonomy")
        if vocab_digest is not None and header["vocab_sha256"] and header["vocab_sha256"] != vocab_digest:
            raise ValueError("checkpoint was trained with a different vocabulary")
        enc = dict(header["encoder"])
        model = cls(EncoderConfig(**enc), taxonomy, header["vocab_size"], header["levels"], header["absent"])
        loaded = ParamStore.load(directory / "model.npz")
        if loaded.names() != model.store.names():
            raise ValueError("checkpoint parameters do not match the encoder configuration")
        model.store = loaded
        model.vocab_digest = header["vocab_sha256"]
        return model


def record_loss(model: HtcModel, record: Record) -> float:
    """Summed per-level cross-entropy of one record, eval mode."""
    return float(model.loss(Graph(train=False), [record]).data)


def resolve_batch(
    class_probs: Sequence[np.ndarray], parent_cols: Sequence[np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised best full-depth path: deepest-level column and its path product.

    ``class_probs[k]`` is (N, n_k) over the level-k nodes in id order;
    ``parent_cols[k][j]`` is the level-(k-1) column of node j's parent. Ties
    go to the smallest column, which is the smallest node-id path.
    """
    score = class_probs[0]
    for probs, parents in zip(class_probs[1:], parent_cols[1:]):
        score = score[:, parents] * probs
    cols = score.argmax(axis=1)
    return cols, score[np.arange(len(cols)), cols]


def resolve_path(level_probs: Sequence[Sequence[float]], taxonomy: Taxonomy) -> tuple[tuple[int, ...], float]:
    """Full-depth root path maximising the product of its per-level probabilities.

    ``level_probs[k][j]`` is the probability of the j-th level-(k+1) node (id
    order). Returns the path (node ids) and its probability.
    """
    depth = len(level_probs)
    if depth == 0 or depth > taxonomy.depth or not taxonomy.levels[depth - 1]:
        raise ValueError(f"taxonomy has no level-{depth} node")
    parent_cols = []
    for k in range(depth):
        nodes = taxonomy.levels[k]
        if len(level_probs[k]) < len(nodes):
            raise T.ShapeError(f"level {k + 1}: {len(level_probs[k])} probabilities for {len(nodes)} nodes")
        if k == 0:
            parent_cols.append(np.zeros(len(nodes), dtype=np.int64))
        else:
            col = {n: j for j, n in enumerate(taxonomy.levels[k - 1])}
            parent_cols.append(np.array([col[taxonomy.parent(n)] for n in nodes]))
    probs = [np.asarray(level_probs[k], dtype=np.float64)[None, : len(taxonomy.levels[k])] for k in range(depth)]
    cols, scores = resolve_batch(probs, parent_cols)
    leaf = taxonomy.levels[depth - 1][int(cols[0])]
    return taxonomy.path_to(leaf), float(scores[0])


def consistency_check(argmax: Sequence[int], taxonomy: Taxonomy) -> bool:
    """True iff each level's prediction is the parent of the next one's."""
    expected = ROOT
    for node in argmax:
        if node == ABSENT or taxonomy.parent(node) != expected:
            return False
        expected = node
    return True


def prediction_confidence(level_probs: Sequence[Sequence[float]]) -> float:
    """Product of the per-level maximum probabilities."""
    if not level_probs:
        raise ValueError("need at least one level")
    return float(np.prod([np.max(p) for p in level_probs]))
