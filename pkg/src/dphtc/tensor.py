"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Graph` records every primitive applied during one forward pass.
:func:`backward` walks that tape once, newest entry first, and writes the
resulting gradients into the gradient slots of a :class:`ParamStore`.

Shape rules are numpy's, with the primitive-specific constraints noted on
each function. Integer inputs (token ids, class targets, masks) are plain
numpy arrays, never tensors.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "GraphError",
    "Tensor",
    "Graph",
    "ParamStore",
    "backward",
    "per_example_gradients",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "embedding",
    "masked_mean",
    "conv1d",
    "max_over_time",
    "relu",
    "tanh",
    "sigmoid",
    "softmax",
    "log_softmax",
    "cross_entropy",
    "softmax_cross_entropy",
    "bce_with_logits",
    "dropout",
    "layer_norm",
    "self_attention",
    "concat",
    "reduce_sum",
    "reduce_mean",
]


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible shapes."""


class GraphError(RuntimeError):
    """Raised on misuse of a graph (non-scalar loss, reuse after backward)."""


class Tensor:
    __slots__ = ("data", "graph", "requires_grad", "name")

    def __init__(self, data, graph: "Graph | None" = None, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.graph = graph
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"


class Graph:
    """Operation tape for a single forward pass.

    Args:
        train: enables dropout.
        rng: generator used for dropout masks; a fresh unseeded one if omitted.
    """

    def __init__(self, train: bool = False, rng: np.random.Generator | None = None):
        self.train = train
        self.rng = rng if rng is not None else np.random.default_rng()
        self.tape: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.params: dict[str, Tensor] = {}
        self.consumed = False
        self.visit_order: list[int] = []

    def param(self, store: "ParamStore", name: str) -> Tensor:
        leaf = self.params.get(name)
        if leaf is None:
            leaf = Tensor(store[name], self, requires_grad=True, name=name)
            self.params[name] = leaf
        return leaf

    def constant(self, value) -> Tensor:
        return Tensor(value, self, requires_grad=False)

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], grad_fn: Callable) -> Tensor:
        if self.consumed:
            raise GraphError("graph already consumed by backward()")
        out.requires_grad = any(t.requires_grad for t in inputs)
        if out.requires_grad:
            self.tape.append((out, inputs, grad_fn))
        return out


class ParamStore:
    """Named parameters plus same-shaped gradient slots, in insertion order."""

    def __init__(self):
        self.params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.grads: "OrderedDict[str, np.ndarray]" = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    @property
    def size(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params.values()])

    def flat_grads(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.grads.values()])

    def assign_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for name, p in self.params.items():
            n = p.size
            self.params[name] = flat[offset:offset + n].reshape(p.shape).copy()
            offset += n
        if offset != flat.size:
            raise ShapeError(f"assign_flat: expected {offset} values, got {flat.size}")

    def slices(self) -> dict[str, slice]:
        """Location of each parameter inside the flat vector."""
        out, offset = {}, 0
        for name, p in self.params.items():
            out[name] = slice(offset, offset + p.size)
            offset += p.size
        return out

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for name, p in self.params.items():
            other.add(name, p.copy())
        return other

    def save(self, path: str | Path) -> None:
        """Write an ``.npz`` archive: one float64 array per parameter name."""
        path = Path(path)
        with open(path, "wb") as fh:
            np.savez(fh, **self.params)

    @classmethod
    def load(cls, path: str | Path) -> "ParamStore":
        store = cls()
        with np.load(Path(path), allow_pickle=False) as archive:
            for name in archive.files:
                store.add(name, archive[name])
        return store

    def shapes_json(self) -> str:
        return json.dumps({k: list(v.shape) for k, v in self.params.items()})


def backward(graph: Graph, loss: Tensor, store: ParamStore | None = None) -> dict[str, np.ndarray]:
    """Back-propagate from a scalar ``loss`` through ``graph``.

    Every parameter bound to the graph gets its gradient; when ``store`` is
    given, all of its slots are overwritten (zeros for parameters the loss
    does not reach). Returns the name -> gradient mapping.
    """
    if graph.consumed:
        raise GraphError("graph already consumed by backward()")
    if loss.graph is not graph:
        raise GraphError("loss was not produced by this graph")
    if loss.data.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")
    graph.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for index in range(len(graph.tape) - 1, -1, -1):
        out, inputs, grad_fn = graph.tape[index]
        graph.visit_order.append(index)
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for tensor, tg in zip(inputs, grad_fn(g)):
            if tg is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + tg
            else:
                grads[key] = tg

    result = {}
    for name, leaf in graph.params.items():
        g = grads.get(id(leaf))
        result[name] = np.zeros_like(leaf.data) if g is None else g
    if store is not None:
        for name in store.params:
            g = result.get(name)
            store.grads[name] = np.zeros_like(store.params[name]) if g is None else np.array(g, dtype=np.float64)
    return result


def per_example_gradients(
    store: ParamStore,
    loss_fn: Callable[[Graph, Sequence], Tensor],
    examples: Sequence,
    *,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """One flattened gradient per example, rows in example order.

    ``loss_fn(graph, batch)`` must return the mean loss over ``batch``; it is
    called with single-element batches. Dropout masks (``train=True``) are
    drawn from ``rng`` sequentially, so results are reproducible for a seeded
    generator.
    """
    if len(examples) == 0:
        raise ValueError("per_example_gradients: empty batch")
    rng = rng if rng is not None else np.random.default_rng(0)
    rows = np.empty((len(examples), store.size))
    for i, example in enumerate(examples):
        graph = Graph(train=train, rng=rng)
        loss = loss_fn(graph, [example])
        backward(graph, loss, store)
        rows[i] = store.flat_grads()
    return rows


# -- helpers ---------------------------------------------------------------


def _graph_of(*tensors: Tensor) -> Graph:
    graph = None
    for t in tensors:
        if t.graph is not None:
            if graph is not None and t.graph is not graph:
                raise GraphError("tensors belong to different graphs")
            graph = t.graph
    if graph is None:
        raise GraphError("no graph attached to inputs")
    return graph


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


def _stable_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


# -- primitives ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` with numpy broadcasting over leading dimensions."""
    graph = _graph_of(a, b)
    if a.data.ndim < 1 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")
    out = Tensor(a.data @ b.data, graph)

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return graph._record(out, (a, b), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Broadcasting sum; covers bias addition."""
    graph = _graph_of(a, b)
    _check_broadcast("add", a, b)
    out = Tensor(a.data + b.data, graph)
    return graph._record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    graph = _graph_of(a, b)
    _check_broadcast("sub", a, b)
    out = Tensor(a.data - b.data, graph)
    return graph._record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    graph = _graph_of(a, b)
    _check_broadcast("mul", a, b)
    out = Tensor(a.data * b.data, graph)
    return graph._record(
        out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))
    )


def scale(x: Tensor, factor: float) -> Tensor:
    graph = _graph_of(x)
    out = Tensor(x.data * factor, graph)
    return graph._record(out, (x,), lambda g: (g * factor,))


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: ``ids`` of any integer shape -> ``ids.shape + (dim,)``."""
    graph = _graph_of(weight)
    ids = np.asarray(ids)
    if weight.data.ndim != 2:
        raise ShapeError(f"embedding: weight must be 2-d, got {weight.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ShapeError(f"embedding: ids outside [0, {weight.shape[0]})")
    out = Tensor(weight.data[ids], graph)

    def grad_fn(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return graph._record(out, (weight,), grad_fn)


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over axis 1 of ``x`` (B, T, D) counting only ``mask`` (B, T) positions.

    Rows with no valid position yield zeros.
    """
    graph = _graph_of(x)
    if x.data.ndim != 3 or mask.shape != x.shape[:2]:
        raise ShapeError(f"masked_mean: x {x.shape} incompatible with mask {mask.shape}")
    m = mask.astype(np.float64)
    counts = np.maximum(m.sum(axis=1, keepdims=True), 1.0)
    weights = (m / counts)[:, :, None]
    out = Tensor((x.data * weights).sum(axis=1), graph)
    return graph._record(out, (x,), lambda g: (g[:, None, :] * weights,))


def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Valid, stride-1 convolution over the token axis.

    ``x`` (B, T, C), ``w`` (width, C, F), ``b`` (F,) -> (B, T - width + 1, F).
    """
    graph = _graph_of(x, w, b)
    if x.data.ndim != 3 or w.data.ndim != 3 or w.shape[1] != x.shape[2] or b.shape != (w.shape[2],):
        raise ShapeError(f"conv1d: x {x.shape}, w {w.shape}, b {b.shape} are incompatible")
    width, channels, filters = w.shape
    batch, length, _ = x.shape
    if length < width:
        raise ShapeError(f"conv1d: sequence length {length} shorter than filter width {width}")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, width, axis=1)  # (B, T', C, width)
    windows = np.ascontiguousarray(windows.transpose(0, 1, 3, 2)).reshape(batch, -1, width * channels)
    kernel = w.data.reshape(width * channels, filters)
    out = Tensor(windows @ kernel + b.data, graph)

    def grad_fn(g):
        steps = g.shape[1]
        gw = (windows.reshape(-1, width * channels).T @ g.reshape(-1, filters)).reshape(w.shape)
        gb = g.sum(axis=(0, 1))
        gwin = (g @ kernel.T).reshape(batch, steps, width, channels)
        gx = np.zeros_like(x.data)
        for j in range(width):
            gx[:, j:j + steps] += gwin[:, :, j]
        return gx, gw, gb

    return graph._record(out, (x, w, b), grad_fn)


def max_over_time(x: Tensor, mask: np.ndarray) -> Tensor:
    """Max over axis 1 of ``x`` (B, T, F), restricted to ``mask`` (B, T) positions."""
    graph = _graph_of(x)
    if x.data.ndim != 3 or mask.shape != x.shape[:2]:
        raise ShapeError(f"max_over_time: x {x.shape} incompatible with mask {mask.shape}")
    if not mask.any(axis=1).all():
        raise ShapeError("max_over_time: a row has no valid position")
    masked = np.where(mask[:, :, None], x.data, -np.inf)
    idx = masked.argmax(axis=1)[:, None, :]
    out = Tensor(np.take_along_axis(x.data, idx, axis=1)[:, 0, :], graph)

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g[:, None, :], axis=1)
        return (gx,)

    return graph._record(out, (x,), grad_fn)


def relu(x: Tensor) -> Tensor:
    graph = _graph_of(x)
    gate = x.data > 0
    out = Tensor(np.where(gate, x.data, 0.0), graph)
    return graph._record(out, (x,), lambda g: (g * gate,))


def tanh(x: Tensor) -> Tensor:
    graph = _graph_of(x)
    y = np.tanh(x.data)
    out = Tensor(y, graph)
    return graph._record(out, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    graph = _graph_of(x)
    y = np.exp(-np.logaddexp(0.0, -x.data))
    out = Tensor(y, graph)
    return graph._record(out, (x,), lambda g: (g * y * (1.0 - y),))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    graph = _graph_of(x)
    y = _stable_softmax(x.data)
    out = Tensor(y, graph)
    return graph._record(out, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def log_softmax(x: Tensor) -> Tensor:
    graph = _graph_of(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = Tensor(y, graph)
    p = np.exp(y)
    return graph._record(out, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def _check_targets(op: str, x: Tensor, targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets)
    if x.data.ndim != 2 or targets.shape != (x.shape[0],):
        raise ShapeError(f"{op}: scores {x.shape} incompatible with targets {targets.shape}")
    if targets.size and targets.max() >= x.shape[1]:
        raise ShapeError(f"{op}: target index {targets.max()} outside {x.shape[1]} classes")
    return targets


def cross_entropy(probs: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row ``-log probs[target]`` for probability rows (B, C).

    A negative target masks its row (loss 0, no gradient).
    """
    graph = _graph_of(probs)
    targets = _check_targets("cross_entropy", probs, targets)
    valid = targets >= 0
    rows = np.arange(len(targets))
    safe = np.where(valid, targets, 0)
    picked = probs.data[rows, safe]
    out = Tensor(np.where(valid, -np.log(np.where(valid, picked, 1.0)), 0.0), graph)

    def grad_fn(g):
        gp = np.zeros_like(probs.data)
        gp[rows[valid], safe[valid]] = -g[valid] / picked[valid]
        return (gp,)

    return graph._record(out, (probs,), grad_fn)


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Fused, numerically stable ``cross_entropy(softmax(logits), targets)``."""
    graph = _graph_of(logits)
    targets = _check_targets("softmax_cross_entropy", logits, targets)
    valid = targets >= 0
    rows = np.arange(len(targets))
    safe = np.where(valid, targets, 0)
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1))
    losses = logz - shifted[rows, safe]
    out = Tensor(np.where(valid, losses, 0.0), graph)
    p = np.exp(shifted - logz[:, None])

    def grad_fn(g):
        gl = p.copy()
        gl[rows, safe] -= 1.0
        gl *= (g * valid)[:, None]
        return (gl,)

    return graph._record(out, (logits,), grad_fn)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-element binary cross-entropy of ``sigmoid(logits)`` against 0/1 targets."""
    graph = _graph_of(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: logits {logits.shape} vs targets {y.shape}")
    z = logits.data
    out = Tensor(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z))), graph)
    p = np.exp(-np.logaddexp(0.0, -z))
    return graph._record(out, (logits,), lambda g: (g * (p - y),))


def dropout(x: Tensor, rate: float) -> Tensor:
    """Inverted dropout; identity unless the graph is in train mode."""
    graph = _graph_of(x)
    if not graph.train or rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    keep = (graph.rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * keep, graph)
    return graph._record(out, (x,), lambda g: (g * keep,))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    graph = _graph_of(x, gamma, beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: x {x.shape} with gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv = 1.0 / np.sqrt((centred ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv
    out = Tensor(xhat * gamma.data + beta.data, graph)

    def grad_fn(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return graph._record(out, (x, gamma, beta), grad_fn)


def self_attention(q: Tensor, k: Tensor, v: Tensor, heads: int, key_mask: np.ndarray) -> Tensor:
    """Multi-head scaled dot-product attention.

    ``q``, ``k``, ``v`` are (B, T, D) projections; ``key_mask`` (B, T) marks
    positions that may be attended to. Output is (B, T, D) with heads
    re-merged along the feature axis.
    """
    graph = _graph_of(q, k, v)
    if not (q.shape == k.shape == v.shape) or q.data.ndim != 3:
        raise ShapeError(f"self_attention: q {q.shape}, k {k.shape}, v {v.shape} must match (B, T, D)")
    batch, length, dim = q.shape
    if dim % heads:
        raise ShapeError(f"self_attention: model dim {dim} not divisible by {heads} heads")
    if key_mask.shape != (batch, length) or not key_mask.any(axis=1).all():
        raise ShapeError(f"self_attention: key mask {key_mask.shape} invalid for ({batch}, {length})")
    hd = dim // heads
    factor = 1.0 / np.sqrt(hd)

    def split(a):
        return a.reshape(batch, length, heads, hd).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * factor
    scores = np.where(key_mask[:, None, None, :], scores, -np.inf)
    p = _stable_softmax(scores)
    ctx = p @ vh
    out = Tensor(ctx.transpose(0, 2, 1, 3).reshape(batch, length, dim), graph)

    def grad_fn(g):
        gh = split(g)
        gp = gh @ vh.transpose(0, 1, 3, 2)
        gv = p.transpose(0, 1, 3, 2) @ gh
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * factor
        gq = gs @ kh
        gk = gs.transpose(0, 1, 3, 2) @ qh

        def merge(a):
            return a.transpose(0, 2, 1, 3).reshape(batch, length, dim)

        return merge(gq), merge(gk), merge(gv)

    return graph._record(out, (q, k, v), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    graph = _graph_of(*tensors)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} differ off axis {axis}") from None
    out = Tensor(data, graph)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return graph._record(out, tuple(tensors), grad_fn)


def reduce_sum(x: Tensor) -> Tensor:
    graph = _graph_of(x)
    out = Tensor(x.data.sum(), graph)
    return graph._record(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def reduce_mean(x: Tensor) -> Tensor:
    graph = _graph_of(x)
    n = x.data.size
    out = Tensor(x.data.mean(), graph)
    return graph._record(out, (x,), lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


def linear(graph: Graph, store: ParamStore, x: Tensor, prefix: str) -> Tensor:
    """Affine map using ``{prefix}.w`` and ``{prefix}.b`` from ``store``."""
    return add(matmul(x, graph.param(store, f"{prefix}.w")), graph.param(store, f"{prefix}.b"))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape: Iterable[int] | None = None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=tuple(shape) if shape is not None else (fan_in, fan_out))
