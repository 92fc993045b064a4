"""Class trees for hierarchical classification."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

ROOT = -1
ABSENT = -1
ROOT_LABEL = "*"


class TaxonomyError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    label: str
    parent: int
    level: int


@dataclass(frozen=True)
class Taxonomy:
    """Immutable tree with dense integer node ids.

    Ids are assigned breadth-first with siblings in label order, so within a
    level, id order equals the lexicographic order of root paths. ``ROOT``
    (-1) is implicit and never appears in ``nodes`` or ``levels``.
    """

    nodes: tuple[Node, ...]
    levels: tuple[tuple[int, ...], ...]
    _by_label: dict = field(repr=False, compare=False, hash=False)
    _children: tuple = field(repr=False, compare=False, hash=False)

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[str, str]]) -> "Taxonomy":
        """Build from ``(child, parent)`` label pairs; parent ``'*'`` is the root."""
        parent_of: dict[str, str] = {}
        for child, parent in edges:
            if child == ROOT_LABEL:
                raise TaxonomyError("the root '*' cannot have a parent")
            if child in parent_of and parent_of[child] != parent:
                raise TaxonomyError(f"node {child!r} has two parents")
            parent_of[child] = parent
        for child, parent in parent_of.items():
            if parent != ROOT_LABEL and parent not in parent_of:
                raise TaxonomyError(f"parent {parent!r} of {child!r} is not connected to the root")

        depth: dict[str, int] = {}
        for start in parent_of:
            trail, node = [], start
            while node != ROOT_LABEL and node not in depth:
                if node in trail:
                    raise TaxonomyError(f"cycle through {node!r}")
                trail.append(node)
                node = parent_of[node]
            base = 0 if node == ROOT_LABEL else depth[node]
            for offset, n in enumerate(reversed(trail), start=1):
                depth[n] = base + offset

        kids: dict[str, list[str]] = {}
        for child, parent in parent_of.items():
            kids.setdefault(parent, []).append(child)
        # Breadth-first, siblings in label order: ids at one level then follow
        # the lexicographic order of their root paths.
        ordered, frontier = [], [ROOT_LABEL]
        while frontier:
            nxt = []
            for parent in frontier:
                nxt.extend(sorted(kids.get(parent, ()), key=_label_key))
            ordered.extend(nxt)
            frontier = nxt
        ids = {label: i for i, label in enumerate(ordered)}
        nodes = tuple(
            Node(label, ROOT if parent_of[label] == ROOT_LABEL else ids[parent_of[label]], depth[label])
            for label in ordered
        )
        max_depth = max(depth.values(), default=0)
        levels = tuple(
            tuple(i for i, n in enumerate(nodes) if n.level == lvl) for lvl in range(1, max_depth + 1)
        )
        children: list[list[int]] = [[] for _ in range(len(nodes) + 1)]
        for i, n in enumerate(nodes):
            children[n.parent].append(i)  # ROOT == -1 lands in the last slot
        return cls(nodes, levels, ids, tuple(tuple(c) for c in children))

    @classmethod
    def load(cls, path: str | Path) -> "Taxonomy":
        """Read a ``child<TAB>parent`` file; blank lines and ``#`` comments are skipped."""
        edges = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise TaxonomyError(f"{path}:{lineno}: expected 'child<TAB>parent'")
                edges.append((parts[0], parts[1]))
        return cls.from_edges(edges)

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for n in self.nodes:
                parent = ROOT_LABEL if n.parent == ROOT else self.nodes[n.parent].label
                fh.write(f"{n.label}\t{parent}\n")

    @property
    def depth(self) -> int:
        return len(self.levels)

    def __len__(self) -> int:
        return len(self.nodes)

    def id_of(self, label: str) -> int:
        try:
            return self._by_label[label]
        except KeyError:
            raise TaxonomyError(f"unknown node label {label!r}") from None

    def has_label(self, label: str) -> bool:
        return label in self._by_label

    def label_of(self, node: int) -> str:
        self._check(node)
        return self.nodes[node].label

    def parent(self, node: int) -> int:
        self._check(node)
        return self.nodes[node].parent

    def level(self, node: int) -> int:
        self._check(node)
        return self.nodes[node].level

    def children(self, node: int) -> tuple[int, ...]:
        if node != ROOT:
            self._check(node)
        return self._children[node]

    def path_to(self, node: int) -> tuple[int, ...]:
        """Root-to-node path, root excluded."""
        self._check(node)
        out = []
        while node != ROOT:
            out.append(node)
            node = self.nodes[node].parent
        return tuple(reversed(out))

    def anc_set(self, node: int) -> frozenset[int]:
        """The node together with all its ancestors, root excluded."""
        if node == ROOT:
            raise TaxonomyError("anc_set is undefined for the root")
        return frozenset(self.path_to(node))

    def lca(self, a: int, b: int) -> int:
        """Deepest common ancestor of ``a`` and ``b`` (``ROOT`` if none other)."""
        self._check(a)
        self._check(b)
        while self.nodes[a].level > self.nodes[b].level:
            a = self.nodes[a].parent
        while self.nodes[b].level > self.nodes[a].level:
            b = self.nodes[b].parent
        while a != b:
            a, b = self.nodes[a].parent, self.nodes[b].parent
        return a

    def validate_path(self, path: Sequence[int]) -> str | None:
        """Return ``None`` if ``path`` is a valid label path, else the first violated rule."""
        if len(path) > self.depth:
            return f"path has {len(path)} levels but the taxonomy only {self.depth}"
        seen_absent = False
        expected_parent = ROOT
        for k, node in enumerate(path, start=1):
            if node == ABSENT:
                seen_absent = True
                continue
            if seen_absent:
                return f"non-contiguous prefix: level {k} set after an ABSENT level"
            if not 0 <= node < len(self.nodes):
                return f"unknown node id {node} at level {k}"
            if self.nodes[node].level != k:
                return f"{self.nodes[node].label} is not a level-{k} node"
            if self.nodes[node].parent != expected_parent:
                parent = "the root" if expected_parent == ROOT else self.nodes[expected_parent].label
                return f"{self.nodes[node].label} is not a child of {parent}"
            expected_parent = node
        return None

    def label_path(self, node: int, depth: int | None = None) -> tuple[int, ...]:
        """Path to ``node`` padded with ``ABSENT`` up to ``depth`` levels."""
        path = self.path_to(node)
        depth = self.depth if depth is None else depth
        return path[:depth] + (ABSENT,) * (depth - len(path[:depth]))

    def truncated(self, levels: int) -> "Taxonomy":
        """Copy keeping only the first ``levels`` levels."""
        edges = []
        for n in self.nodes:
            if n.level <= levels:
                parent = ROOT_LABEL if n.parent == ROOT else self.nodes[n.parent].label
                edges.append((n.label, parent))
        return Taxonomy.from_edges(edges)

    def digest(self) -> str:
        h = hashlib.sha256()
        for n in self.nodes:
            parent = ROOT_LABEL if n.parent == ROOT else self.nodes[n.parent].label
            h.update(f"{n.label}\t{parent}\n".encode())
        return h.hexdigest()

    def _check(self, node: int) -> None:
        if not isinstance(node, (int,)) and not hasattr(node, "__index__"):
            raise TaxonomyError(f"node id must be an integer, got {node!r}")
        if not 0 <= node < len(self.nodes):
            raise TaxonomyError(f"unknown node id {node}")


def _label_key(label: str):
    # Numeric-aware ordering so '10' sorts after '9' and '3.10' after '3.9'.
    parts = label.replace("-", ".").split(".")
    return tuple((0, int(p), "") if p.isdigit() else (1, 0, p) for p in parts), label


def balanced_tree(branching: Sequence[int]) -> Taxonomy:
    """Tree with dotted labels ('1', '1.2', '1.2.3'); ``branching[k]`` children per level-k node."""
    edges = []
    frontier = [""]
    for width in branching:
        nxt = []
        for parent in frontier:
            for i in range(1, width + 1):
                label = f"{parent}.{i}" if parent else str(i)
                edges.append((label, parent or ROOT_LABEL))
                nxt.append(label)
        frontier = nxt
    return Taxonomy.from_edges(edges)
