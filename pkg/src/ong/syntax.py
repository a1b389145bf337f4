"""Dependency-tree computations.

Trees are treated as undirected for every distance and path query.  Spans
are inclusive ``(start, end)`` token-index pairs.
"""
from __future__ import annotations

from collections import deque
from typing import Iterable, Sequence

import numpy as np

ROOT = -1

Span = tuple[int, int]


class TreeError(ValueError):
    """Raised when a head sequence does not encode a single rooted tree."""


class DepTree:
    """Validated dependency tree over ``n`` tokens.

    ``heads[i]`` is the 0-based head of token ``i`` or ``ROOT`` (-1).
    """

    __slots__ = ("n", "heads", "neighbors", "_depth")

    def __init__(self, heads: Sequence[int]):
        check_heads(heads)
        self.n = len(heads)
        self.heads = tuple(int(h) for h in heads)
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for i, h in enumerate(self.heads):
            if h != ROOT:
                nbrs[i].append(h)
                nbrs[h].append(i)
        self.neighbors = tuple(tuple(sorted(x)) for x in nbrs)
        self._depth = None

    @property
    def root(self) -> int:
        return self.heads.index(ROOT)

    def edges(self) -> list[tuple[int, int]]:
        return [(h, i) for i, h in enumerate(self.heads) if h != ROOT]

    def depth(self) -> tuple[int, ...]:
        """Edge count from each token to the root."""
        if self._depth is None:
            self._depth = tuple(bfs_distances(self, [self.root]))
        return self._depth

    def __repr__(self):
        return f"DepTree({list(self.heads)})"


def check_heads(heads: Sequence[int]) -> None:
    n = len(heads)
    if n < 1:
        raise TreeError("empty tree")
    roots = [i for i, h in enumerate(heads) if h == ROOT]
    if len(roots) != 1:
        raise TreeError(f"expected exactly one root, found {len(roots)}")
    for i, h in enumerate(heads):
        if h == ROOT:
            continue
        if not 0 <= h < n:
            raise TreeError(f"head index {h} of token {i} out of range")
        if h == i:
            raise TreeError("cyclic heads")
    # every token must reach the root in < n steps
    state = [0] * n  # 0 unseen, 1 on current walk, 2 reaches root
    state[roots[0]] = 2
    for start in range(n):
        walk = []
        node = start
        while state[node] == 0:
            state[node] = 1
            walk.append(node)
            node = heads[node]
        if state[node] == 1:
            raise TreeError("cyclic heads")
        for w in walk:
            state[w] = 2


def bfs_distances(tree: DepTree, sources: Iterable[int]) -> list[int]:
    dist = [-1] * tree.n
    queue = deque()
    for s in sources:
        if dist[s] != 0:
            dist[s] = 0
            queue.append(s)
    while queue:
        u = queue.popleft()
        for v in tree.neighbors[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def tree_distances(tree: DepTree, target_span: Span) -> list[int]:
    """Edge count from every token to the nearest target-span token."""
    s, e = target_span
    return bfs_distances(tree, range(s, e + 1))


def syntax_scores(d: Sequence[float]) -> np.ndarray:
    """Softmax of the negated distances."""
    x = -np.asarray(d, dtype=np.float64)
    x -= x.max()
    p = np.exp(x)
    return p / p.sum()


def dep_adjacency(tree: DepTree) -> np.ndarray:
    """Binary undirected adjacency with self-loops."""
    a = np.eye(tree.n)
    for h, i in tree.edges():
        a[h, i] = a[i, h] = 1.0
    return a


def path_nodes(tree: DepTree, src: int, dst: int) -> set[int]:
    """Node set of the unique tree path between ``src`` and ``dst``."""
    if src == dst:
        return {src}
    # walk both endpoints up to their lowest common ancestor
    depth = tree.depth()
    a, b = src, dst
    left, right = [a], [b]
    while depth[a] > depth[b]:
        a = tree.heads[a]
        left.append(a)
    while depth[b] > depth[a]:
        b = tree.heads[b]
        right.append(b)
    while a != b:
        a = tree.heads[a]
        b = tree.heads[b]
        left.append(a)
        right.append(b)
    return set(left) | set(right)


def nearest_in_span(tree: DepTree, span: Span, word: int) -> int:
    """Target-span token closest to ``word``; ties go to the lowest index."""
    s, e = span
    if s == e:
        return s
    dist = bfs_distances(tree, [word])
    return min(range(s, e + 1), key=lambda t: (dist[t], t))


def span_anchor(tree: DepTree, span: Span) -> int:
    """Shallowest token of a span (its syntactic head); ties to lowest index."""
    s, e = span
    if s == e:
        return s
    depth = tree.depth()
    return min(range(s, e + 1), key=lambda t: (depth[t], t))


def pruning_mask(tree: DepTree, target_span: Span, word_set: Iterable[int]) -> np.ndarray:
    """Boolean mask of the tokens on some path from the target to ``word_set``."""
    keep = np.zeros(tree.n, dtype=bool)
    for w in word_set:
        t = nearest_in_span(tree, target_span, w)
        keep[list(path_nodes(tree, t, w))] = True
    return keep


def pruned_adjacency(a, tree: DepTree, target_span: Span, word_set: Iterable[int]):
    """Zero every entry of ``a`` whose row or column lies off the pruned tree.

    Works for numpy arrays and torch tensors alike; the shape is unchanged.
    """
    keep = pruning_mask(tree, target_span, word_set).astype(np.float64)
    outer = np.outer(keep, keep)
    if isinstance(a, np.ndarray):
        return a * outer
    import torch

    return a * torch.as_tensor(outer, dtype=a.dtype, device=a.device)
