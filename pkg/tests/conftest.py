import numpy as np
import pytest

from dphtc.harness import ExperimentConfig, apply_overrides
from dphtc.taxonomy import Taxonomy


def numeric_grad(f, x, step=1e-5):
    """Central differences of scalar ``f()`` with respect to array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        up = f()
        x[i] = old - step
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * step)
    return g


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


SAMPLE_EDGES = [
    ("1", "*"), ("2", "*"), ("3", "*"),
    ("1.1", "1"), ("2.1", "2"), ("2.1.1", "2.1"),
    ("3.1", "3"), ("3.2", "3"), ("3.3", "3"), ("3.2.1", "3.2"), ("3.2.2", "3.2"),
]


@pytest.fixture
def sample_tree():
    return Taxonomy.from_edges(SAMPLE_EDGES)


def random_taxonomy(rng, max_nodes=40, max_depth=4, full_depth=False):
    """Random tree with shuffled, non-dotted labels."""
    depth = int(rng.integers(1, max_depth + 1))
    edges = []
    frontier = ["*"]
    count = 0
    for level in range(depth):
        nxt = []
        for parent in frontier:
            width = int(rng.integers(1 if full_depth else 0, 4))
            if parent == frontier[0] or level == 0:
                width = max(width, 1)
            for _ in range(width):
                if count >= max_nodes:
                    break
                label = f"n{rng.integers(1_000_000)}_{count}"
                edges.append((label, parent))
                nxt.append(label)
                count += 1
        frontier = nxt
        if not frontier:
            break
    order = rng.permutation(len(edges))
    return Taxonomy.from_edges([edges[i] for i in order])


TINY_OVERRIDES = {
    "data.synth.branching": [2, 2],
    "data.synth.n": 160,
    "data.synth.vocab_size": 200,
    "model.kind": "bow",
    "model.embed_dim": 8,
    "trainer.max_epochs": 2,
    "trainer.batch_size": 16,
    "dp.max_epochs": 2,
    "dp.batch_size": 16,
    "sweep": [1.0],
    "attack.max_per_group": 20,
    "attack.classifier.encoder_width": 8,
    "attack.classifier.head_widths": [8, 4],
    "attack.classifier.max_epochs": 5,
}


def tiny_config(**overrides):
    """A seconds-scale experiment on a 2x2 synthetic tree."""
    return apply_overrides(ExperimentConfig(), {**TINY_OVERRIDES, **overrides})
