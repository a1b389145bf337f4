import itertools
import random

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ong.syntax import (ROOT, DepTree, TreeError, dep_adjacency, path_nodes, pruned_adjacency,
                        pruning_mask, span_anchor, syntax_scores, tree_distances)

from conftest import random_heads

CHAIN3 = DepTree([ROOT, 0, 1])
CHAIN4 = DepTree([ROOT, 0, 1, 2])


def floyd_warshall(tree):
    n = tree.n
    inf = float("inf")
    d = [[0 if i == j else inf for j in range(n)] for i in range(n)]
    for h, i in tree.edges():
        d[h][i] = d[i][h] = 1
    for k, i, j in itertools.product(range(n), repeat=3):
        if d[i][k] + d[k][j] < d[i][j]:
            d[i][j] = d[i][k] + d[k][j]
    return d


def bfs_parent_path(tree, src, dst):
    """Path by BFS parents from src, then follow them back from dst."""
    parent = {src: None}
    frontier = [src]
    while frontier:
        nxt = []
        for u in frontier:
            for v in tree.neighbors[u]:
                if v not in parent:
                    parent[v] = u
                    nxt.append(v)
        frontier = nxt
    out, node = set(), dst
    while node is not None:
        out.add(node)
        node = parent[node]
    return out


trees = st.integers(1, 12).flatmap(
    lambda n: st.integers(0, 2**32 - 1).map(lambda seed: DepTree(random_heads(n, random.Random(seed)))))


class TestDepTree:
    @pytest.mark.parametrize("heads", [[], [ROOT, ROOT], [1, 0], [ROOT, 5], [ROOT, 1], [1, 2, 0, ROOT]])
    def test_invalid(self, heads):
        with pytest.raises(TreeError):
            DepTree(heads)

    def test_two_cycle_message(self):
        with pytest.raises(TreeError, match="cyclic heads"):
            DepTree([1, 0, ROOT])


class TestDistances:
    def test_chain(self):
        assert tree_distances(CHAIN3, (1, 1)) == [1, 0, 1]

    def test_figure_tree(self, fig1):
        tokens, heads = fig1
        d = tree_distances(DepTree(heads), (1, 1))
        assert d[tokens.index("disappointing")] == 1
        assert d[tokens.index("XYZ")] == 2
        assert d[tokens.index("reputable")] == 4
        assert d[1] == 0

    def test_multiword_target_is_min(self):
        assert tree_distances(CHAIN4, (1, 2)) == [1, 0, 0, 1]

    @given(trees, st.data())
    def test_matches_floyd_warshall(self, tree, data):
        s = data.draw(st.integers(0, tree.n - 1))
        e = data.draw(st.integers(s, tree.n - 1))
        fw = floyd_warshall(tree)
        expected = [min(fw[t][i] for t in range(s, e + 1)) for i in range(tree.n)]
        assert tree_distances(tree, (s, e)) == expected


class TestSyntaxScores:
    def test_two(self):
        np.testing.assert_allclose(syntax_scores([1, 2]), [0.7310585786300049, 0.2689414213699951],
                                   atol=1e-12)

    def test_three(self):
        np.testing.assert_allclose(syntax_scores([0, 1, 1]),
                                   [0.5761168847658291, 0.21194155761708544, 0.21194155761708544],
                                   atol=1e-12)

    def test_uniform(self):
        np.testing.assert_allclose(syntax_scores([3] * 7), np.full(7, 1 / 7))

    @given(st.lists(st.integers(0, 60), min_size=1, max_size=40))
    def test_distribution(self, d):
        s = syntax_scores(d)
        assert abs(s.sum() - 1) <= 1e-6 and (s > 0).all()
        for a, b in itertools.combinations(range(len(d)), 2):
            if d[a] < d[b]:
                assert s[a] > s[b]


class TestAdjacency:
    def test_chain(self):
        np.testing.assert_array_equal(dep_adjacency(CHAIN3), [[1, 1, 0], [1, 1, 1], [0, 1, 1]])

    def test_single(self):
        np.testing.assert_array_equal(dep_adjacency(DepTree([ROOT])), [[1]])

    @given(trees)
    def test_symmetric_with_self_loops(self, tree):
        a = dep_adjacency(tree)
        assert (a == a.T).all() and (np.diag(a) == 1).all()
        assert a.sum() == tree.n + 2 * (tree.n - 1)


class TestPaths:
    def test_chain(self):
        assert path_nodes(CHAIN4, 1, 3) == {1, 2, 3}

    def test_identity(self):
        assert path_nodes(CHAIN4, 2, 2) == {2}

    @given(trees, st.data())
    def test_matches_bfs_parents(self, tree, data):
        a = data.draw(st.integers(0, tree.n - 1))
        b = data.draw(st.integers(0, tree.n - 1))
        assert path_nodes(tree, a, b) == bfs_parent_path(tree, a, b)
        assert len(path_nodes(tree, a, b)) == floyd_warshall(tree)[a][b] + 1

    def test_anchor_is_shallowest(self, fig1):
        _, heads = fig1
        tree = DepTree(heads)
        assert span_anchor(tree, (11, 13)) == 13
        assert span_anchor(tree, (0, 1)) == 1


class TestPruning:
    def test_chain(self):
        a = np.ones((4, 4))
        out = pruned_adjacency(a, CHAIN4, (1, 1), {3})
        k = np.array([0, 1, 1, 1.0])
        np.testing.assert_array_equal(out, np.outer(k, k))

    def test_empty_word_set(self):
        a = dep_adjacency(CHAIN4)
        assert not pruned_adjacency(a, CHAIN4, (1, 1), set()).any()

    def test_full_retention(self):
        a = np.random.default_rng(0).random((4, 4))
        np.testing.assert_array_equal(pruned_adjacency(a, CHAIN4, (0, 0), {3}), a)

    def test_torch_input(self):
        a = torch.ones(4, 4, dtype=torch.float64, requires_grad=True)
        out = pruned_adjacency(a, CHAIN4, (1, 1), {3})
        assert isinstance(out, torch.Tensor) and out.requires_grad
        assert out[0].sum() == 0 and out[1:, 1:].sum() == 9

    def test_figure_opinion_path(self, fig1):
        tokens, heads = fig1
        keep = pruning_mask(DepTree(heads), (1, 1), [tokens.index("disappointing")])
        assert set(np.flatnonzero(keep)) == {1, 13}

    @given(trees, st.data())
    def test_bounded_and_idempotent(self, tree, data):
        t = data.draw(st.integers(0, tree.n - 1))
        words = data.draw(st.sets(st.integers(0, tree.n - 1)))
        a = np.random.default_rng(tree.n).random((tree.n, tree.n))
        once = pruned_adjacency(a, tree, (t, t), words)
        assert (once <= a).all()
        np.testing.assert_array_equal(pruned_adjacency(once, tree, (t, t), words), once)
