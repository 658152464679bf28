"""Single-level administrative hierarchy: hierarchical trees, counts and plan validity.

A hierarchical spanning tree restricts to a spanning tree inside every
administrative unit it meets, and its cross-unit edges form a spanning tree
of the unit-level multigraph.  A plan is hierarchical when some
hierarchical spanning tree of the whole map can be cut into its regions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import _core
from ._rng import stream
from .graph import ConfigurationError, GraphError, MapGraph, Plan, boundary_edges
from .trees import RegionTree, _indicator, _members


@dataclass(frozen=True)
class AdminHierarchy:
    """View of a graph's administrative units."""

    unit: np.ndarray
    n_units: int
    unit_vertices: tuple[tuple[int, ...], ...]

    @classmethod
    def from_graph(cls, graph: MapGraph) -> "AdminHierarchy":
        unit = _units(graph)
        groups: list[list[int]] = [[] for _ in range(graph.n_units)]
        for v, a in enumerate(unit):
            groups[int(a)].append(v)
        return cls(unit, graph.n_units, tuple(tuple(g) for g in groups))

    def unit_multigraph(self, graph: MapGraph) -> np.ndarray:
        """Edge multiplicities between units."""
        m = np.zeros((self.n_units, self.n_units), dtype=np.int64)
        for a, b in graph.edges:
            ua, ub = int(self.unit[a]), int(self.unit[b])
            if ua != ub:
                m[ua, ub] += 1
                m[ub, ua] += 1
        return m


def _units(graph: MapGraph) -> np.ndarray:
    if graph.admin_unit is None:
        raise ConfigurationError("this operation needs administrative units on the graph")
    return np.asarray(graph.admin_unit, dtype=np.int64)


def hierarchically_connected(graph: MapGraph, vertices: Iterable[int] | None = None) -> bool:
    """Connected, and meeting every unit in at most one connected piece."""
    _units(graph)
    verts = _members(graph, vertices)
    if not graph.is_connected_subset(verts.tolist()):
        return False
    lab = _indicator(graph, verts)
    return bool(_core.hier_check(graph.arrays(), lab, np.arange(2, dtype=np.int64), 2, 1))


def hierarchical_wilson(graph: MapGraph, rng, vertices: Iterable[int] | None = None, size: int = 1) -> RegionTree:
    """Uniformly random hierarchical spanning tree of the subgraph on ``vertices``.

    Draws a Wilson tree inside each unit intersection, then a Wilson tree on
    the unit-level multigraph where every walk step picks one of the
    incident cross-unit edges uniformly, so parallel edges are kept distinct.
    """
    verts = _members(graph, vertices)
    if not hierarchically_connected(graph, verts):
        raise GraphError("subgraph is not hierarchically connected")
    n = graph.n_vertices
    lab = _indicator(graph, verts)
    parent = np.full(n, -1, dtype=np.int64)
    pedge = np.full(n, -1, dtype=np.int64)
    got = _core.hier_wilson(
        graph.arrays(), lab, np.arange(2, dtype=np.int64), 1, verts, verts.size, stream(rng), parent, pedge,
        np.empty(verts.size, dtype=np.int64), np.empty(n, dtype=np.int64),
    )
    if got != verts.size:
        raise GraphError("subgraph is not hierarchically connected")
    return RegionTree.from_arrays(verts, parent, pedge, size)


def log_tau_eta(graph: MapGraph, vertices: Iterable[int] | None = None) -> float:
    """log number of hierarchical spanning trees of the subgraph on ``vertices``."""
    verts = _members(graph, vertices)
    if not hierarchically_connected(graph, verts):
        raise GraphError("subgraph is not hierarchically connected")
    lab = _indicator(graph, verts)
    return float(
        _core.log_tau_eta_set(
            graph.arrays(), lab, np.arange(2, dtype=np.int64), 1, verts, verts.size, np.empty(graph.n_vertices, np.int64)
        )
    )


def is_hierarchical_plan(graph: MapGraph, plan: Plan) -> bool:
    """Whether a hierarchical spanning tree of the map can be cut into this plan.

    Equivalent test: every region meets each unit in one piece, and in each
    component of the graph linking regions that share a unit the number of
    unit splits equals the number of regions minus one.
    """
    _units(graph)
    return bool(_core.hier_check(graph.arrays(), plan.assignment, _core.identity_map(plan.r), plan.r, -1))


def hierarchical_boundary(graph: MapGraph, plan: Plan, k: int, k2: int) -> list[int]:
    """Administrative boundary set between regions ``k`` and ``k2``.

    The full boundary when the regions share no unit, the boundary edges
    inside the shared unit when they share exactly one, otherwise empty.
    """
    unit = _units(graph)
    edges = boundary_edges(graph, plan, k, k2)
    shared = set(unit[plan.region(k)].tolist()) & set(unit[plan.region(k2)].tolist())
    if not shared:
        return edges
    if len(shared) == 1:
        (a,) = shared
        return [e for e in edges if unit[graph.edges[e, 0]] == a and unit[graph.edges[e, 1]] == a]
    return []


def hierarchically_adjacent(graph: MapGraph, plan: Plan, k: int, k2: int) -> bool:
    """Whether merging ``k`` and ``k2`` leaves a hierarchical plan with a
    non-empty administrative boundary between them."""
    if not hierarchical_boundary(graph, plan, k, k2):
        return False
    rmap = _core.merge_map(plan.r, min(k, k2), max(k, k2))
    return bool(_core.hier_check(graph.arrays(), plan.assignment, rmap, plan.r, -1))


def log_hier_linking_edge_count(graph: MapGraph, plan: Plan) -> float:
    """log number of hierarchical linking-edge sets of a hierarchical plan.

    Trees inside each component of administratively adjacent regions (over
    within-unit boundary edges) times trees joining those components.
    """
    if not is_hierarchical_plan(graph, plan):
        raise GraphError("plan is not hierarchical")
    G = graph.arrays()
    ident = _core.identity_map(plan.r)
    cnt, within = _core.pair_counts(G, plan.assignment, ident, plan.r)
    return float(_core.log_tau_eta_quotient(cnt, within, plan.r, ident))
