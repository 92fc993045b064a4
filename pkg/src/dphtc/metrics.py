"""Flat and hierarchical utility metrics over label paths.

Paths are tuples of node ids, one per level, with ``ABSENT`` marking levels
below a partial-depth label. Predictions are truncated to the depth of the
matching truth before comparison. Sums are taken over records before
dividing (micro-averaging) and kept as exact fractions.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .taxonomy import ABSENT, ROOT, Taxonomy


@dataclass
class EvalResult:
    accuracy: float
    p_h: float
    r_h: float
    f_h: float
    p_lca: float
    r_lca: float
    f_lca: float
    count: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _depth(path: Sequence[int]) -> int:
    d = 0
    for node in path:
        if node == ABSENT:
            break
        d += 1
    return d


def _deepest(path: Sequence[int], depth: int) -> int:
    """Deepest non-ABSENT node within the first ``depth`` levels, or ROOT."""
    node = ROOT
    for n in path[:depth]:
        if n == ABSENT:
            break
        node = n
    return node


def _check_lengths(predictions, truths) -> None:
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} predictions for {len(truths)} truths")


def flat_accuracy(predictions: Sequence[Sequence[int]], truths: Sequence[Sequence[int]]) -> Fraction:
    """Share of records whose prediction, cut to the truth's depth, equals the truth."""
    _check_lengths(predictions, truths)
    if not truths:
        return Fraction(0)
    hits = 0
    for pred, true in zip(predictions, truths):
        d = _depth(true)
        hits += tuple(pred[:d]) == tuple(true[:d])
    return Fraction(hits, len(truths))


def f_measure(p: Fraction, r: Fraction) -> Fraction:
    return Fraction(0) if p + r == 0 else 2 * p * r / (p + r)


def _ancestor_sets(pred, true, taxonomy: Taxonomy, restrict_to_lca: bool):
    d = _depth(true)
    t_node, p_node = _deepest(true, d), _deepest(pred, d)
    anc = taxonomy.anc_set(t_node) if t_node != ROOT else frozenset()
    anc_hat = taxonomy.anc_set(p_node) if p_node != ROOT else frozenset()
    if restrict_to_lca and t_node != ROOT and p_node != ROOT:
        common = taxonomy.lca(t_node, p_node)
        if common != ROOT:
            above = taxonomy.anc_set(common) - {common}
            anc, anc_hat = anc - above, anc_hat - above
    return anc, anc_hat


def _prf(predictions, truths, taxonomy, restrict_to_lca):
    _check_lengths(predictions, truths)
    inter = n_pred = n_true = 0
    for pred, true in zip(predictions, truths):
        anc, anc_hat = _ancestor_sets(pred, true, taxonomy, restrict_to_lca)
        inter += len(anc & anc_hat)
        n_pred += len(anc_hat)
        n_true += len(anc)
    p = Fraction(inter, n_pred) if n_pred else Fraction(0)
    r = Fraction(inter, n_true) if n_true else Fraction(0)
    return p, r, f_measure(p, r)


def hierarchical_prf(predictions, truths, taxonomy: Taxonomy) -> tuple[Fraction, Fraction, Fraction]:
    """Micro-averaged hierarchical precision, recall and F over ancestor sets."""
    return _prf(predictions, truths, taxonomy, restrict_to_lca=False)


def lca_prf(predictions, truths, taxonomy: Taxonomy) -> tuple[Fraction, Fraction, Fraction]:
    """Hierarchical P/R/F with ancestors strictly above each pair's LCA removed."""
    return _prf(predictions, truths, taxonomy, restrict_to_lca=True)


def evaluate(predictions, truths, taxonomy: Taxonomy) -> EvalResult:
    acc = flat_accuracy(predictions, truths)
    ph, rh, fh = hierarchical_prf(predictions, truths, taxonomy)
    pl, rl, fl = lca_prf(predictions, truths, taxonomy)
    return EvalResult(*(float(x) for x in (acc, ph, rh, fh, pl, rl, fl)), count=len(truths))


def per_level_accuracy(predictions, truths, levels: int) -> list[float]:
    """Accuracy at each level over records labelled at that level."""
    out = []
    for k in range(levels):
        pairs = [(p[k], t[k]) for p, t in zip(predictions, truths) if t[k] != ABSENT]
        out.append(sum(p == t for p, t in pairs) / len(pairs) if pairs else float("nan"))
    return out


def write_per_level_csv(path: str | Path, rows: dict[str, list[float]]) -> None:
    """``rows`` maps a split name to its per-level accuracies."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        width = max((len(v) for v in rows.values()), default=0)
        writer.writerow(["split", *(f"L{k}" for k in range(1, width + 1))])
        for name, values in rows.items():
            writer.writerow([name, *(repr(float(v)) for v in values)])
