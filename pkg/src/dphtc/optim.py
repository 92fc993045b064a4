"""Adam, DP-Adam and the epoch loop with early stopping."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Record
from .metrics import flat_accuracy
from .models import HtcModel
from .tensor import Graph, backward, per_example_gradients

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 30
    patience: int | None = 3  # None trains for exactly max_epochs and keeps the final weights
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class DpConfig:
    """Gaussian perturbation settings; ``sigma = noise_multiplier * clip_norm``.

    ``clip_norm=math.inf`` disables clipping (only meaningful with zero noise).
    """

    noise_multiplier: float = 1.0
    clip_norm: float = 1.0
    microbatch_size: int = 1

    def __post_init__(self):
        if self.noise_multiplier < 0:
            raise ValueError("noise multiplier must be >= 0")
        if not self.clip_norm > 0:
            raise ValueError("clip norm must be > 0")
        if self.microbatch_size < 1:
            raise ValueError("microbatch size must be >= 1")
        if math.isinf(self.clip_norm) and self.noise_multiplier > 0:
            raise ValueError("noise requires a finite clip norm")

    @property
    def sigma(self) -> float:
        return 0.0 if self.noise_multiplier == 0 else self.noise_multiplier * self.clip_norm

    @property
    def is_identity(self) -> bool:
        return self.noise_multiplier == 0 and math.isinf(self.clip_norm)


class Adam:
    """Bias-corrected Adam over one flat parameter vector."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class StepRngs:
    """Independent streams so dropout draws never shift the noise sequence."""

    shuffle: np.random.Generator
    dropout: np.random.Generator
    noise: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "StepRngs":
        a, b, c = np.random.SeedSequence(seed).spawn(3)
        return cls(np.random.default_rng(a), np.random.default_rng(b), np.random.default_rng(c))


def clip(g: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale ``g`` down to L2 norm ``clip_norm`` if it is longer."""
    if clip_norm <= 0:
        raise ValueError("clip norm must be > 0")
    norm = float(np.linalg.norm(g))
    if norm <= clip_norm:
        return g
    return g * (clip_norm / norm)


def clip_rows(rows: np.ndarray, clip_norm: float) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    factors = np.minimum(1.0, clip_norm / np.maximum(norms, 1e-300))
    return rows * factors


def batch_gradient(model: HtcModel, batch: Sequence[Record], rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Mean-loss gradient of one batch (train mode) and the batch loss."""
    graph = Graph(train=True, rng=rng)
    loss = model.loss(graph, batch)
    backward(graph, loss, model.store)
    return model.store.flat_grads(), float(loss.data)


def private_gradient(
    model: HtcModel,
    batch: Sequence[Record],
    dp: DpConfig,
    rngs: StepRngs,
    hook: Callable[[np.ndarray], None] | None = None,
) -> np.ndarray:
    """Clipped, noised gradient estimate for one batch.

    Per-example gradients are averaged within each microbatch, each
    microbatch mean is clipped to ``dp.clip_norm``, the clipped means are
    summed, one Gaussian draw of scale ``dp.sigma`` is added, and the result
    is divided by the number of microbatches. ``hook`` sees the clipped
    microbatch matrix before noise.
    """
    size = len(batch)
    if size % dp.microbatch_size:
        raise ValueError(f"microbatch size {dp.microbatch_size} does not divide batch size {size}")
    per_example = per_example_gradients(model.store, model.loss, batch, train=True, rng=rngs.dropout)
    n_micro = size // dp.microbatch_size
    micro = per_example.reshape(n_micro, dp.microbatch_size, -1).mean(axis=1)
    if not math.isinf(dp.clip_norm):
        micro = clip_rows(micro, dp.clip_norm)
    if hook is not None:
        hook(micro)
    total = micro.sum(axis=0)
    if dp.sigma > 0:
        total = total + rngs.noise.normal(0.0, dp.sigma, size=total.shape)
    return total / n_micro


def dp_step(
    model: HtcModel,
    batch: Sequence[Record],
    dp: DpConfig,
    optimizer: Adam,
    rngs: StepRngs,
    hook: Callable[[np.ndarray], None] | None = None,
) -> np.ndarray:
    """One DP-Adam update in place; returns the privatised gradient."""
    if dp.is_identity:
        grad, _ = batch_gradient(model, batch, rngs.dropout)
    else:
        grad = private_gradient(model, batch, dp, rngs, hook)
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient; step aborted")
    model.store.assign_flat(optimizer.step(model.store.flat_params(), grad))
    return grad


def lower_median(values: Sequence[float]) -> float:
    """Median, taking the lower middle value for even counts."""
    if len(values) == 0:
        raise ValueError("median of an empty sequence")
    ordered = sorted(values)
    return float(ordered[(len(ordered) - 1) // 2])


@dataclass
class TrainReport:
    epochs: int = 0
    steps: int = 0
    best_epoch: int = 0
    stopped_early: bool = False
    clip_norm: float | None = None
    noise_multiplier: float | None = None
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)  # non-private runs only

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("grad_norms")
        for key in ("clip_norm",):
            if d[key] is not None and math.isinf(d[key]):
                d[key] = "inf"
        return json.dumps(d, indent=2, sort_keys=True)

    def write_grad_norms(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "norm"])
            for step, norm in enumerate(self.grad_norms, start=1):
                writer.writerow([step, repr(norm)])


def evaluate_split(model: HtcModel, records: Sequence[Record]) -> tuple[float, float]:
    """Eval-mode mean loss and flat accuracy of resolved paths."""
    if not records:
        return float("nan"), float("nan")
    total = 0.0
    for start in range(0, len(records), 256):
        chunk = records[start:start + 256]
        total += float(model.loss(Graph(train=False), chunk).data) * len(chunk)
    preds = model.predict(records)
    acc = flat_accuracy([p.path for p in preds], [r.label for r in records])
    return total / len(records), float(acc)


def train(
    model: HtcModel,
    train_set: Sequence[Record],
    val_set: Sequence[Record],
    config: TrainConfig,
    dp: DpConfig | None = None,
    seed: int = 0,
    hook: Callable[[np.ndarray], None] | None = None,
    step_callback: Callable[[int, HtcModel], None] | None = None,
) -> TrainReport:
    """Fit ``model`` in place and return the training report.

    Batches are fixed-size (the short tail of each shuffled epoch is
    dropped). With ``config.patience`` set, training stops once validation
    loss has not improved for that many epochs and the best-epoch weights are
    restored.
    """
    if not train_set or not val_set:
        raise ValueError("train and validation splits must be non-empty")
    size = config.batch_size
    if size > len(train_set):
        raise ValueError(f"batch size {size} exceeds {len(train_set)} training records")
    if dp is not None and size % dp.microbatch_size:
        raise ValueError(f"microbatch size {dp.microbatch_size} does not divide batch size {size}")
    rngs = StepRngs.from_seed(seed)
    optimizer = Adam(model.store.size, config.lr, config.beta1, config.beta2, config.eps)
    report = TrainReport(
        clip_norm=None if dp is None else dp.clip_norm,
        noise_multiplier=None if dp is None else dp.noise_multiplier,
    )
    best_loss, best_params, bad_epochs = math.inf, None, 0
    steps_per_epoch = len(train_set) // size

    for epoch in range(1, config.max_epochs + 1):
        order = rngs.shuffle.permutation(len(train_set))
        for b in range(steps_per_epoch):
            batch = [train_set[i] for i in order[b * size:(b + 1) * size]]
            if dp is None:
                grad, loss = batch_gradient(model, batch, rngs.dropout)
                if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
                    raise DivergenceError(f"non-finite loss at step {report.steps + 1}")
                report.grad_norms.append(float(np.linalg.norm(grad)))
                model.store.assign_flat(optimizer.step(model.store.flat_params(), grad))
            else:
                dp_step(model, batch, dp, optimizer, rngs, hook)
            report.steps += 1
            if step_callback is not None:
                step_callback(report.steps, model)

        train_loss, train_acc = evaluate_split(model, train_set)
        val_loss, val_acc = evaluate_split(model, val_set)
        if not math.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss after epoch {epoch}")
        report.epochs = epoch
        report.train_loss.append(train_loss)
        report.train_acc.append(train_acc)
        report.val_loss.append(val_loss)
        report.val_acc.append(val_acc)
        logger.debug("epoch %d: train %.4f val %.4f acc %.3f", epoch, train_loss, val_loss, val_acc)

        if config.patience is None:
            continue
        if val_loss < best_loss:
            best_loss, bad_epochs, report.best_epoch = val_loss, 0, epoch
            best_params = model.store.flat_params()
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                report.stopped_early = True
                break

    if config.patience is None:
        report.best_epoch = report.epochs
    elif best_params is not None:
        model.store.assign_flat(best_params)
    return report


def calibrate_clipping_norm(
    make_model: Callable[[], HtcModel],
    train_set: Sequence[Record],
    val_set: Sequence[Record],
    config: TrainConfig,
    seed: int = 0,
) -> tuple[float, TrainReport]:
    """Median per-step batch-gradient norm over one non-private training run."""
    model = make_model()
    report = train(model, train_set, val_set, config, dp=None, seed=seed)
    return lower_median(report.grad_norms), report
