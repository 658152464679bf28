"""Uniform spanning trees, spanning-tree counts and tree cuts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _core
from ._rng import stream
from .graph import GraphError, MapGraph, QuotientMultigraph
from .target import PopulationBounds


@dataclass(frozen=True)
class RegionTree:
    """A rooted spanning tree of the subgraph induced by ``vertices``.

    ``parent`` maps each vertex to its parent (``-1`` at the root) and
    ``parent_edge`` to the graph edge joining them.  ``size`` is the number
    of seats the region carries.
    """

    vertices: tuple[int, ...]
    root: int
    parent: Mapping[int, int]
    parent_edge: Mapping[int, int]
    size: int = 1

    def edges(self) -> frozenset[int]:
        return frozenset(e for e in self.parent_edge.values() if e >= 0)

    def order(self) -> list[int]:
        """Vertices in breadth-first order from the root."""
        children: dict[int, list[int]] = {v: [] for v in self.vertices}
        for v in self.vertices:
            p = self.parent[v]
            if p >= 0:
                children[p].append(v)
        out = [self.root]
        for v in out:
            out.extend(sorted(children[v]))
        return out

    @classmethod
    def from_arrays(cls, vertices: Iterable[int], parent: np.ndarray, parent_edge: np.ndarray, size: int = 1):
        verts = tuple(sorted(int(v) for v in vertices))
        roots = [v for v in verts if parent[v] < 0]
        if len(roots) != 1:
            raise GraphError(f"expected exactly one root, found {len(roots)}")
        return cls(
            verts,
            roots[0],
            {v: int(parent[v]) for v in verts},
            {v: int(parent_edge[v]) for v in verts},
            size,
        )


@dataclass(frozen=True)
class TreeCut:
    """Removal of one tree edge with seat counts for the two sides.

    The ``below`` side is the subtree hanging from ``vertex``; the ``above``
    side contains the root.
    """

    edge: int
    vertex: int
    sizes: tuple[int, int]
    pops: tuple[float, float]
    max_abs_dev: float
    balanced: bool
    pair_index: int


def _members(graph: MapGraph, vertices: Iterable[int] | None) -> np.ndarray:
    if vertices is None:
        return np.arange(graph.n_vertices, dtype=np.int64)
    verts = np.array(sorted({int(v) for v in vertices}), dtype=np.int64)
    if verts.size == 0:
        raise GraphError("need at least one vertex")
    if verts[0] < 0 or verts[-1] >= graph.n_vertices:
        raise GraphError("vertex index out of range")
    return verts


def _indicator(graph: MapGraph, verts: np.ndarray) -> np.ndarray:
    lab = np.zeros(graph.n_vertices, dtype=np.int64)
    lab[verts] = 1
    return lab


def wilson_tree(graph: MapGraph, rng, vertices: Iterable[int] | None = None, size: int = 1) -> RegionTree:
    """Uniformly random spanning tree of the subgraph induced by ``vertices``.

    Uses Wilson's loop-erased random walk algorithm, rooted at the smallest
    vertex.
    """
    verts = _members(graph, vertices)
    if not graph.is_connected_subset(verts.tolist()):
        raise GraphError("cannot draw a spanning tree of a disconnected subgraph")
    n = graph.n_vertices
    lab = _indicator(graph, verts)
    parent = np.full(n, -1, dtype=np.int64)
    pedge = np.full(n, -1, dtype=np.int64)
    _core.wilson(
        graph.arrays(), lab, np.arange(2, dtype=np.int64), 1, -1, verts, verts.size, stream(rng), parent, pedge,
        np.empty(n, dtype=np.bool_), np.empty(n, dtype=np.int64), np.empty(n, dtype=np.int64),
    )
    return RegionTree.from_arrays(verts, parent, pedge, size)


def _connected_matrix(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    stack = [0]
    while stack:
        u = stack.pop()
        for w in np.nonzero(adj[u] > 0)[0]:
            if not seen[w]:
                seen[w] = True
                stack.append(int(w))
    return bool(seen.all())


def log_spanning_tree_count(obj: MapGraph | QuotientMultigraph | np.ndarray, vertices: Iterable[int] | None = None) -> float:
    """Natural log of the number of spanning trees (matrix-tree theorem).

    ``obj`` may be a map graph (optionally restricted to ``vertices``), a
    quotient multigraph, or a symmetric matrix of edge multiplicities.
    """
    if isinstance(obj, MapGraph):
        verts = _members(obj, vertices)
        loc = {int(v): i for i, v in enumerate(verts)}
        adj = np.zeros((verts.size, verts.size))
        for a, b in obj.edges:
            if int(a) in loc and int(b) in loc:
                adj[loc[int(a)], loc[int(b)]] += 1
                adj[loc[int(b)], loc[int(a)]] += 1
    elif isinstance(obj, QuotientMultigraph):
        adj = np.zeros((obj.n_nodes, obj.n_nodes))
        for (i, j), c in obj.multiplicity.items():
            adj[i, j] += c
            adj[j, i] += c
    else:
        adj = np.asarray(obj, dtype=float)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or not np.allclose(adj, adj.T) or (adj < 0).any():
            raise GraphError("expected a symmetric non-negative multiplicity matrix")
    adj = adj.copy()
    np.fill_diagonal(adj, 0.0)
    n = adj.shape[0]
    if n == 0:
        raise GraphError("need at least one node")
    if not _connected_matrix(adj):
        raise GraphError("graph is disconnected: it has no spanning tree")
    lap = np.diag(adj.sum(axis=1)) - adj
    return float(_core.laplacian_logdet(lap, n))


def oriented_pairs(pairs: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """Both orientations of every unordered size pair, in schedule order."""
    out = []
    for a, b in pairs:
        out.append((int(a), int(b)))
        if a != b:
            out.append((int(b), int(a)))
    return out


def enumerate_tree_cuts(
    graph: MapGraph,
    tree: RegionTree,
    allowed_sizes: Sequence[tuple[int, int]],
    pop_bounds: PopulationBounds,
) -> list[TreeCut]:
    """Every (tree edge, size pair) cut of ``tree``.

    A pair ``(s1, s2)`` gives ``s1`` seats to the subtree below the cut edge
    and ``s2`` to the side holding the root.  Cuts are ordered by edge index,
    then by position in ``allowed_sizes``.
    """
    order = tree.order()
    sub = {v: float(graph.pop[v]) for v in order}
    for v in reversed(order[1:]):
        sub[tree.parent[v]] += sub[v]
    total = sub[tree.root]
    below = sorted(order[1:], key=lambda v: tree.parent_edge[v])
    cuts = []
    for v in below:
        p = sub[v]
        for j, (s1, s2) in enumerate(allowed_sizes):
            dev = max(pop_bounds.deviation(p, s1), pop_bounds.deviation(total - p, s2))
            ok = pop_bounds.is_balanced(p, s1) and pop_bounds.is_balanced(total - p, s2)
            cuts.append(TreeCut(tree.parent_edge[v], v, (int(s1), int(s2)), (p, total - p), dev, ok, j))
    return cuts


def subtree_vertices(tree: RegionTree, vertex: int) -> set[int]:
    """Vertices of the subtree hanging from ``vertex``."""
    children: dict[int, list[int]] = {v: [] for v in tree.vertices}
    for v in tree.vertices:
        if tree.parent[v] >= 0:
            children[tree.parent[v]].append(v)
    out = {vertex}
    stack = [vertex]
    while stack:
        for w in children[stack.pop()]:
            out.add(w)
            stack.append(w)
    return out
