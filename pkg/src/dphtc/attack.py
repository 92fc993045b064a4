"""White-box membership inference against a trained hierarchical classifier."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from . import tensor as T
from .accountant import advantage_bound
from .data import Record
from .models import HtcModel, consistency_check, prediction_confidence
from .optim import Adam
from .tensor import Graph, ParamStore, backward


class AttackError(ValueError):
    pass


# -- splits ----------------------------------------------------------------


@dataclass
class AttackSplit:
    train_members: list[Record]
    train_nonmembers: list[Record]
    test_members: list[Record]
    test_nonmembers: list[Record]
    known_fraction: float = 0.5


def build_attack_splits(
    members: Sequence[Record],
    nonmembers: Sequence[Record],
    known_fraction: float = 0.5,
    seed: int = 0,
    max_per_group: int | None = None,
) -> AttackSplit:
    """Partition target train (members) and test (non-members) records.

    ``known_fraction`` of each side goes to attack training; the remainders
    are downsampled to equal size for a balanced attack test set.
    ``max_per_group`` optionally caps each of the four groups.
    """
    if not members or not nonmembers:
        raise AttackError("member and non-member sets must be non-empty")
    if not 0 < known_fraction < 1:
        raise AttackError("known fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    m = [members[i] for i in rng.permutation(len(members))]
    nm = [nonmembers[i] for i in rng.permutation(len(nonmembers))]
    km, kn = int(len(m) * known_fraction), int(len(nm) * known_fraction)
    if km < 1 or kn < 1:
        raise AttackError("too few records for attack training")
    rest = min(len(m) - km, len(nm) - kn)
    cap = max_per_group if max_per_group is not None else max(len(m), len(nm))
    return AttackSplit(
        m[:min(km, cap)], nm[:min(kn, cap)],
        m[km:km + min(rest, cap)], nm[kn:kn + min(rest, cap)],
        known_fraction,
    )


# -- features --------------------------------------------------------------


@dataclass
class AttackRecord:
    losses: np.ndarray
    probs: np.ndarray  # per-level softmax outputs, concatenated
    labels: np.ndarray  # per-level one-hot targets, concatenated (zeros where masked)
    gradients: dict[str, np.ndarray]
    member: int
    consistent: float | None = None
    confidence: float | None = None

    def groups(self) -> dict[str, np.ndarray]:
        out = {"loss": self.losses, "output": self.probs, "label": self.labels}
        for name, g in self.gradients.items():
            out[f"grad:{name}"] = g
        if self.consistent is not None:
            out["htc"] = np.array([self.consistent, self.confidence])
        return out

    def to_json(self) -> str:
        d = {
            "losses": self.losses.tolist(),
            "probs": self.probs.tolist(),
            "labels": self.labels.tolist(),
            "gradients": {k: v.tolist() for k, v in self.gradients.items()},
            "member": self.member,
            "consistent": self.consistent,
            "confidence": self.confidence,
        }
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> "AttackRecord":
        d = json.loads(line)
        return cls(
            np.array(d["losses"]), np.array(d["probs"]), np.array(d["labels"]),
            {k: np.array(v) for k, v in d["gradients"].items()},
            d["member"], d["consistent"], d["confidence"],
        )


def save_features(records: Iterable[AttackRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def load_features(path: str | Path) -> list[AttackRecord]:
    with open(path) as fh:
        return [AttackRecord.from_json(line) for line in fh if line.strip()]


def check_compatible(model: HtcModel, taxonomy_digest: str, vocab_digest: str | None = None) -> None:
    if model.taxonomy.digest() != taxonomy_digest:
        raise AttackError("record taxonomy does not match the target checkpoint")
    ckpt_vocab = getattr(model, "vocab_digest", "")
    if vocab_digest and ckpt_vocab and ckpt_vocab != vocab_digest:
        raise AttackError("record vocabulary does not match the target checkpoint")


def extract_features(
    model: HtcModel,
    record: Record,
    member: int,
    with_htc_features: bool = False,
    gradient_groups: Sequence[str] | None = None,
) -> AttackRecord:
    """Eval-mode forward and backward of one record through the target."""
    groups = list(gradient_groups) if gradient_groups is not None else model.head_groups()
    unknown = [g for g in groups if g not in model.store]
    if unknown:
        raise AttackError(f"unknown parameter groups {unknown}")
    graph = Graph(train=False)
    logits = model.forward(graph, [record])
    targets = model.targets([record])[0]
    losses = [T.softmax_cross_entropy(lg, targets[k:k + 1]) for k, lg in enumerate(logits)]
    total = losses[0]
    for extra in losses[1:]:
        total = T.add(total, extra)
    grads = backward(graph, T.reduce_sum(total))

    probs = [T._stable_softmax(lg.data[0]) for lg in logits]
    onehots = []
    for k, width in enumerate(model.head_sizes):
        v = np.zeros(width)
        if targets[k] >= 0:
            v[targets[k]] = 1.0
        onehots.append(v)
    consistent = confidence = None
    if with_htc_features:
        argmax = []
        for k, p in enumerate(probs):
            j = int(p.argmax())
            nodes = model.level_nodes[k]
            argmax.append(nodes[j] if j < len(nodes) else -1)
        consistent = float(consistency_check(argmax, model.taxonomy))
        confidence = prediction_confidence(probs)
    return AttackRecord(
        losses=np.array([float(l.data[0]) for l in losses]),
        probs=np.concatenate(probs),
        labels=np.concatenate(onehots),
        gradients={name: grads[name].ravel().copy() for name in groups},
        member=int(member),
        consistent=consistent,
        confidence=confidence,
    )


def extract_all(model: HtcModel, records: Sequence[Record], member: int, **kwargs) -> list[AttackRecord]:
    return [extract_features(model, r, member, **kwargs) for r in records]


# -- attack classifier -----------------------------------------------------


@dataclass
class AttackConfig:
    encoder_width: int = 64
    head_widths: tuple[int, int] = (128, 64)
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 3
    holdout: float = 0.1


def _stack(records: Sequence[AttackRecord]) -> dict[str, np.ndarray]:
    names = list(records[0].groups())
    out = {}
    for name in names:
        rows = [r.groups()[name] for r in records]
        if len({len(x) for x in rows}) != 1:
            raise AttackError(f"feature group {name!r} has inconsistent dimensions")
        out[name] = np.vstack(rows)
    return out


class AttackModel:
    """Per-group ReLU encoders, concatenated into a two-layer head with one sigmoid output."""

    def __init__(self, dims: dict[str, int], config: AttackConfig, seed: int = 0):
        self.config = config
        self.groups = list(dims)
        self.mean: dict[str, np.ndarray] = {}
        self.scale: dict[str, float] = {}
        rng = np.random.default_rng(seed)
        s = self.store = ParamStore()
        w = config.encoder_width
        for name, d in dims.items():
            s.add(f"enc[{name}].w", T.glorot(rng, d, w))
            s.add(f"enc[{name}].b", np.zeros(w))
        fan_in = w * len(dims)
        for i, width in enumerate(config.head_widths):
            s.add(f"fc{i}.w", T.glorot(rng, fan_in, width))
            s.add(f"fc{i}.b", np.zeros(width))
            fan_in = width
        s.add("out.w", T.glorot(rng, fan_in, 1))
        s.add("out.b", np.zeros(1))

    def fit_normaliser(self, features: dict[str, np.ndarray]) -> None:
        """Centre each coordinate; scale each group by one RMS deviation.

        A single scale per group keeps the geometry inside a gradient group;
        per-coordinate scaling would blow up the many near-constant entries.
        """
        for name in self.groups:
            x = features[name]
            self.mean[name] = x.mean(axis=0)
            rms = float(np.sqrt(((x - self.mean[name]) ** 2).sum(axis=1).mean()))
            self.scale[name] = rms if rms > 1e-12 else 1.0

    def _normalise(self, features: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        return {n: (features[n] - self.mean[n]) / self.scale[n] for n in self.groups}

    def logits(self, graph: Graph, features: dict[str, np.ndarray]) -> T.Tensor:
        x = self._normalise(features)
        encoded = [T.relu(T.linear(graph, self.store, graph.constant(x[n]), f"enc[{n}]")) for n in self.groups]
        h = T.concat(encoded, axis=-1)
        for i in range(len(self.config.head_widths)):
            h = T.relu(T.linear(graph, self.store, h, f"fc{i}"))
        out = T.linear(graph, self.store, h, "out")
        return out

    def scores(self, records: Sequence[AttackRecord]) -> np.ndarray:
        """Membership probabilities."""
        z = self.logits(Graph(train=False), _stack(records)).data[:, 0]
        return np.exp(-np.logaddexp(0.0, -z))


def _weighted_loss(model: AttackModel, graph: Graph, feats, y, weights) -> T.Tensor:
    z = model.logits(graph, feats)
    per = T.bce_with_logits(z, y[:, None])
    return T.reduce_mean(T.mul(per, graph.constant(weights[:, None])))


def _class_weights(y: np.ndarray) -> np.ndarray:
    pos = max(y.mean(), 1e-12)
    return np.where(y == 1, 0.5 / pos, 0.5 / max(1 - pos, 1e-12))


def train_attack_model(
    records: Sequence[AttackRecord], seed: int = 0, config: AttackConfig | None = None
) -> AttackModel:
    """Fit the attack classifier with Adam and holdout early stopping.

    Classes are re-weighted to equal total weight, since attack training
    sets need not be balanced.
    """
    if not records:
        raise AttackError("empty attack training set")
    config = config or AttackConfig()
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    n_hold = max(1, int(round(len(records) * config.holdout))) if len(records) > 10 else 0
    hold = [records[i] for i in order[:n_hold]]
    fit = [records[i] for i in order[n_hold:]]

    feats = _stack(fit)
    y = np.array([r.member for r in fit], dtype=np.float64)
    model = AttackModel({n: v.shape[1] for n, v in feats.items()}, config, seed)
    model.fit_normaliser(feats)
    weights = _class_weights(y)
    if hold:
        hold_feats = _stack(hold)
        hold_y = np.array([r.member for r in hold], dtype=np.float64)
        hold_w = _class_weights(hold_y)

    optimizer = Adam(model.store.size, config.lr)
    best, best_params, bad = math.inf, model.store.flat_params(), 0
    for _ in range(config.max_epochs):
        perm = rng.permutation(len(fit))
        for start in range(0, len(fit), config.batch_size):
            idx = perm[start:start + config.batch_size]
            graph = Graph(train=True, rng=rng)
            batch = {n: v[idx] for n, v in feats.items()}
            loss = _weighted_loss(model, graph, batch, y[idx], weights[idx])
            backward(graph, loss, model.store)
            grad = model.store.flat_grads()
            if not np.all(np.isfinite(grad)):
                raise AttackError("attack model training diverged")
            model.store.assign_flat(optimizer.step(model.store.flat_params(), grad))
        if not hold:
            continue
        val = float(_weighted_loss(model, Graph(), hold_feats, hold_y, hold_w).data)
        if val < best:
            best, best_params, bad = val, model.store.flat_params(), 0
        else:
            bad += 1
            if bad >= config.patience:
                break
    if hold:
        model.store.assign_flat(best_params)
    return model


# -- evaluation ------------------------------------------------------------


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: P(member score > non-member score), ties counted half."""
    scores, labels = np.asarray(scores, dtype=np.float64), np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise AttackError("AUC needs both members and non-members")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> list[tuple[float, float]]:
    """(FPR, TPR) points for every distinct threshold, from (0, 0) to (1, 1)."""
    scores, labels = np.asarray(scores, dtype=np.float64), np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = len(labels) - n_pos
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    for i in range(len(s)):
        tp += int(y[i] == 1)
        fp += int(y[i] != 1)
        if i == len(s) - 1 or s[i + 1] != s[i]:
            points.append((fp / n_neg, tp / n_pos))
    return points


@dataclass
class AttackReport:
    accuracy: float
    auc: float
    tpr: float
    fpr: float
    advantage: float
    members: int
    nonmembers: int
    epsilon: float | None = None
    bound: float | None = None
    bound_vacuous: bool | None = None
    roc: list[tuple[float, float]] = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        for key in ("epsilon", "bound"):
            if d[key] is not None and math.isinf(d[key]):
                d[key] = "inf"
        d["roc"] = [list(p) for p in self.roc]
        return json.dumps(d, indent=2, sort_keys=True)


def report_from_scores(scores: Sequence[float], labels: Sequence[int], epsilon: float | None = None) -> AttackReport:
    """Threshold-0.5 rates plus rank AUC; the bound is filled in when ``epsilon`` is given."""
    scores, labels = np.asarray(scores, dtype=np.float64), np.asarray(labels)
    predicted = scores >= 0.5
    members = labels == 1
    n_pos, n_neg = int(members.sum()), int((~members).sum())
    if n_pos == 0 or n_neg == 0:
        raise AttackError("attack test set needs members and non-members")
    tpr = float((predicted & members).sum() / n_pos)
    fpr = float((predicted & ~members).sum() / n_neg)
    report = AttackReport(
        accuracy=float((predicted == members).mean()),
        auc=roc_auc(scores, labels),
        tpr=tpr,
        fpr=fpr,
        advantage=tpr - fpr,
        members=n_pos,
        nonmembers=n_neg,
        roc=roc_curve(scores, labels),
    )
    if epsilon is not None:
        report.epsilon = epsilon
        report.bound = advantage_bound(epsilon)
        report.bound_vacuous = bool(report.bound >= 1)
    return report


def evaluate_attack(model: AttackModel, records: Sequence[AttackRecord], epsilon: float | None = None) -> AttackReport:
    return report_from_scores(model.scores(records), [r.member for r in records], epsilon)
