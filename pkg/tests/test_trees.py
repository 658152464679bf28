import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsmc.graph import GraphError, MapGraph, Plan, QuotientMultigraph, quotient_multigraph
from gsmc.target import PopulationBounds
from gsmc.trees import enumerate_tree_cuts, log_spanning_tree_count, subtree_vertices, wilson_tree

from helpers import chi_square_p, region_trees, spanning_trees


def cycle(n):
    return MapGraph([str(i) for i in range(n)], [1] * n, [(i, (i + 1) % n) for i in range(n)])


def test_log_count_small_cases():
    assert log_spanning_tree_count(cycle(4)) == pytest.approx(math.log(4), abs=1e-12)
    assert log_spanning_tree_count(MapGraph(["x"], [1], [])) == 0.0
    assert log_spanning_tree_count(MapGraph.grid(2, 3)) == pytest.approx(math.log(15), abs=1e-12)


def test_log_count_of_multigraph_and_subset():
    q = QuotientMultigraph(2, {(0, 1): 2})
    assert log_spanning_tree_count(q) == pytest.approx(math.log(2))
    g = MapGraph.grid(3, 3)
    assert log_spanning_tree_count(g, [0, 1, 3, 4]) == pytest.approx(math.log(4))
    with pytest.raises(GraphError):
        log_spanning_tree_count(g, [0, 8])


def test_log_count_on_quotient_of_singletons():
    g = MapGraph.grid(2, 2)
    q = quotient_multigraph(g, Plan([0, 1, 2, 3], [1, 1, 1, 1]))
    assert log_spanning_tree_count(q) == pytest.approx(math.log(4))


@st.composite
def multigraphs(draw):
    n = draw(st.integers(1, 6))
    edges = [(i, draw(st.integers(0, i - 1))) for i in range(1, n)]  # random spanning tree keeps it connected
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=6))
    edges += [(a, b) for a, b in extra if a != b]
    return n, edges


@settings(max_examples=60, deadline=None)
@given(multigraphs())
def test_matrix_tree_matches_enumeration(case):
    n, edges = case
    m = np.zeros((n, n), dtype=np.int64)
    for a, b in edges:
        m[a, b] += 1
        m[b, a] += 1
    count = len(spanning_trees(n, edges))
    assert math.exp(log_spanning_tree_count(m)) == pytest.approx(count, rel=1e-9)


def test_wilson_single_vertex_and_path():
    g = MapGraph.grid(1, 3)
    t = wilson_tree(g, 0, vertices=[1])
    assert t.root == 1 and not t.edges()
    rng = np.random.default_rng(3)
    for _ in range(20):
        assert wilson_tree(g, rng).edges() == frozenset({0, 1})


def test_wilson_c4_frequencies():
    g = cycle(4)
    rng = np.random.default_rng(11)
    counts = Counter(wilson_tree(g, rng).edges() for _ in range(100_000))
    assert len(counts) == 4
    for c in counts.values():
        assert abs(c / 100_000 - 0.25) < 0.02


def test_wilson_on_a_subregion_is_uniform():
    g = MapGraph.grid(3, 3)
    region = [0, 1, 2, 4, 5]
    trees = region_trees(g, region)
    rng = np.random.default_rng(5)
    counts = Counter(wilson_tree(g, rng, vertices=region).edges() for _ in range(30_000))
    assert chi_square_p(counts, {t: 1 / len(trees) for t in trees}) > 1e-3


def test_wilson_rejects_disconnected_subset():
    with pytest.raises(GraphError):
        wilson_tree(MapGraph.grid(3, 3), 0, vertices=[0, 8])


def _path_tree(graph):
    # the only spanning tree of a path, rooted at vertex 0
    return wilson_tree(graph, 0, size=2)


def test_tree_cuts_on_p4():
    g = MapGraph.grid(1, 4)
    bounds = PopulationBounds.exact(g, 2)
    cuts = enumerate_tree_cuts(g, _path_tree(g), [(1, 1)], bounds)
    assert len(cuts) == 3
    by_edge = {c.edge: c for c in cuts}
    middle = by_edge[g.edge_index(1, 2)]
    assert middle.balanced and middle.max_abs_dev == 0.0 and middle.pops == (2.0, 2.0)
    end = by_edge[g.edge_index(2, 3)]
    assert sorted(end.pops) == [1.0, 3.0]
    assert end.max_abs_dev == pytest.approx(0.5)
    assert not end.balanced


def test_tree_cut_count_is_edges_times_pairs():
    g = MapGraph.grid(2, 3)
    tree = wilson_tree(g, 4, size=3)
    cuts = enumerate_tree_cuts(g, tree, [(1, 2), (2, 1)], PopulationBounds.exact(g, 3))
    assert len(cuts) == 5 * 2
    for c in cuts:
        below = subtree_vertices(tree, c.vertex)
        assert c.pops[0] == len(below)
