import itertools
import math
from collections import Counter

import numpy as np
import pytest

from gsmc.graph import ConfigurationError, GraphError, MapGraph, Plan, boundary_edges
from gsmc.hierarchy import (
    hierarchical_boundary,
    hierarchical_wilson,
    hierarchically_connected,
    is_hierarchical_plan,
    log_hier_linking_edge_count,
    log_tau_eta,
)
from gsmc.oracle import enumerate_balanced_plans
from gsmc.graph import DistrictingScheme
from gsmc.target import PopulationBounds
from gsmc.trees import log_spanning_tree_count, wilson_tree

from helpers import (
    brute_force_is_hierarchical_plan,
    chi_square_p,
    forests_of,
    hierarchical_trees,
    is_hierarchical_tree,
    linking_sets,
)

ROWS = [0, 0, 1, 1]


def test_log_tau_eta_examples():
    rows = MapGraph.grid(2, 2, admin_unit=ROWS)
    assert log_tau_eta(rows) == pytest.approx(math.log(2))
    one = MapGraph.grid(2, 3, admin_unit=[0] * 6)
    assert log_tau_eta(one) == pytest.approx(log_spanning_tree_count(one))
    single = MapGraph.grid(2, 3, admin_unit=list(range(6)))
    assert log_tau_eta(single) == pytest.approx(log_spanning_tree_count(single))


@pytest.mark.parametrize(
    "rows, cols, units, region",
    [
        (2, 3, [0, 0, 1, 0, 0, 1], None),
        (3, 3, [0, 0, 1, 0, 2, 1, 2, 2, 1], None),
        (3, 3, [0, 0, 1, 0, 2, 1, 2, 2, 1], [0, 1, 3, 4, 6, 7]),
        (2, 4, [0, 0, 1, 1, 2, 2, 1, 1], None),
    ],
)
def test_log_tau_eta_counts_hierarchical_trees(rows, cols, units, region):
    g = MapGraph.grid(rows, cols, admin_unit=units)
    trees = hierarchical_trees(g, region)
    assert math.exp(log_tau_eta(g, region)) == pytest.approx(len(trees), rel=1e-9)


def test_hierarchical_wilson_on_rows():
    g = MapGraph.grid(2, 2, admin_unit=ROWS)
    rng = np.random.default_rng(2)
    counts = Counter(hierarchical_wilson(g, rng).edges() for _ in range(50_000))
    assert len(counts) == 2
    for c in counts.values():
        assert abs(c / 50_000 - 0.5) < 0.02


def test_hierarchical_wilson_is_uniform_on_a_3x3_map():
    g = MapGraph.grid(3, 3, admin_unit=[0, 0, 1, 0, 2, 1, 2, 2, 1])
    trees = hierarchical_trees(g)
    rng = np.random.default_rng(4)
    counts = Counter(hierarchical_wilson(g, rng).edges() for _ in range(40_000))
    assert chi_square_p(counts, {t: 1 / len(trees) for t in trees}) > 1e-3


def test_hierarchical_wilson_degenerate_hierarchies_match_plain_trees():
    g = MapGraph.grid(2, 3, admin_unit=[0] * 6)
    t = hierarchical_wilson(g, 1)
    assert len(t.edges()) == 5
    g2 = MapGraph.grid(2, 3, admin_unit=list(range(6)))
    assert len(hierarchical_wilson(g2, 1).edges()) == 5


def test_hierarchical_wilson_rejects_split_unit():
    # top row is one unit; the region meets it in two separate pieces
    g = MapGraph.grid(2, 3, admin_unit=[0, 0, 0, 1, 1, 1])
    assert not hierarchically_connected(g, [0, 2, 3, 4, 5])
    assert hierarchically_connected(g, [0, 1, 3, 4])
    with pytest.raises(GraphError):
        hierarchical_wilson(g, 0, vertices=[0, 2, 3, 4, 5])


def test_is_hierarchical_plan_examples():
    rows = MapGraph.grid(2, 2, admin_unit=ROWS)
    assert is_hierarchical_plan(rows, Plan([0, 0, 1, 1], [1, 1]))
    assert not is_hierarchical_plan(rows, Plan([0, 1, 0, 1], [1, 1]))
    with pytest.raises(ConfigurationError):
        is_hierarchical_plan(MapGraph.grid(2, 2), Plan([0, 0, 1, 1], [1, 1]))


def test_hierarchical_boundary_cases():
    path = MapGraph.grid(1, 4, admin_unit=[0, 0, 1, 1])
    plan = Plan([0, 0, 1, 1], [1, 1])
    assert hierarchical_boundary(path, plan, 0, 1) == boundary_edges(path, plan, 0, 1)
    rows = MapGraph.grid(2, 2, admin_unit=ROWS)
    assert hierarchical_boundary(rows, Plan([0, 1, 0, 1], [1, 1]), 0, 1) == []
    # 3x2 grid, columns as regions; unit x = top two rows, bottom vertices separate units
    g = MapGraph.grid(3, 2, admin_unit=[0, 0, 0, 0, 1, 2])
    cols = Plan([0, 1, 0, 1, 0, 1], [1, 1])
    got = {tuple(g.edges[e]) for e in hierarchical_boundary(g, cols, 0, 1)}
    assert got == {(0, 1), (2, 3)}


def test_hier_linking_count_matches_brute_force():
    g = MapGraph.grid(3, 3, admin_unit=[0, 0, 1, 0, 2, 1, 2, 2, 1])
    bounds = PopulationBounds.exact(g, 3)
    checked = 0
    for plan in enumerate_balanced_plans(g, DistrictingScheme.single_member(3), bounds):
        if not is_hierarchical_plan(g, plan):
            continue
        forests = [f for f in forests_of(g, plan) if all(
            is_hierarchical_tree(g, [f.parent_edge[v] for v in plan.region(k) if f.parent_edge[v] >= 0],
                                 plan.region(k).tolist())
            for k in range(plan.r))]
        f = forests[0]
        tree = [int(e) for e in f.parent_edge if e >= 0]
        count = sum(1 for L in linking_sets(g, plan) if is_hierarchical_tree(g, tree + list(L)))
        assert math.exp(log_hier_linking_edge_count(g, plan)) == pytest.approx(count, rel=1e-9)
        checked += 1
    assert checked > 0


@pytest.mark.parametrize(
    "rows, cols, units",
    [(2, 3, [0, 0, 1, 0, 2, 1]), (2, 4, [0, 0, 1, 1, 2, 2, 1, 1]), (1, 6, [0, 0, 1, 1, 2, 2])],
)
def test_is_hierarchical_plan_matches_tree_existence(rows, cols, units):
    g = MapGraph.grid(rows, cols, admin_unit=units)
    trees = hierarchical_trees(g)
    n = g.n_vertices
    for D in range(2, 5):
        wide = PopulationBounds(0.0, float(n), n / D)
        for plan in enumerate_balanced_plans(g, DistrictingScheme.single_member(D), wide):
            assert is_hierarchical_plan(g, plan) == brute_force_is_hierarchical_plan(g, plan, trees), plan
