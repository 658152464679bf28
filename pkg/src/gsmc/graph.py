"""Map graphs, districting schemes, plans and plan-level summaries.

Vertices, edges and regions are indexed densely by integers.  External
vertex ids only matter at the IO boundary.  Plans are stored as
assignment vectors and compare equal up to a relabelling of regions.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised when a graph or plan violates a structural invariant."""


class ConfigurationError(ValueError):
    """Raised when a requested feature needs configuration that is absent."""


class MapGraph:
    """Immutable dual graph of geographic units.

    Parameters
    ----------
    ids:
        External vertex identifiers, in index order.
    pops:
        Non-negative integer populations.
    edges:
        Unordered vertex-index pairs.  Self loops and duplicates are rejected.
    attributes:
        Optional mapping of attribute name to a per-vertex sequence of numbers.
    admin_unit:
        Optional per-vertex administrative unit index (the map eta).
    unit_names:
        Optional names of the administrative units, indexed by unit.
    """

    def __init__(
        self,
        ids: Sequence[str],
        pops: Sequence[int],
        edges: Iterable[tuple[int, int]],
        attributes: Mapping[str, Sequence[float]] | None = None,
        admin_unit: Sequence[int] | None = None,
        unit_names: Sequence[str] | None = None,
    ) -> None:
        n = len(ids)
        if n == 0:
            raise GraphError("graph must have at least one vertex")
        if len(pops) != n:
            raise GraphError("pops must have one entry per vertex")
        self.ids: tuple[str, ...] = tuple(str(i) for i in ids)
        if len(set(self.ids)) != n:
            raise GraphError("vertex ids must be unique")
        pop = np.asarray(pops, dtype=np.int64)
        if np.any(pop < 0):
            raise GraphError("populations must be non-negative")
        if pop.sum() <= 0:
            raise GraphError("total population must be positive")
        self.pop = pop
        self.pop.setflags(write=False)

        seen: set[tuple[int, int]] = set()
        edge_list: list[tuple[int, int]] = []
        for a, b in edges:
            a, b = int(a), int(b)
            if not (0 <= a < n and 0 <= b < n):
                raise GraphError(f"edge ({a}, {b}) references an unknown vertex")
            if a == b:
                raise GraphError(f"self loop at vertex {self.ids[a]!r}")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise GraphError(
                    f"duplicate edge ({self.ids[key[0]]!r}, {self.ids[key[1]]!r})"
                )
            seen.add(key)
            edge_list.append(key)
        self.edges = np.array(edge_list, dtype=np.int64).reshape(-1, 2)
        self.edges.setflags(write=False)

        self.attributes: dict[str, np.ndarray] = {}
        for name, values in (attributes or {}).items():
            arr = np.asarray(values, dtype=np.float64)
            if arr.shape != (n,):
                raise GraphError(f"attribute {name!r} must have one value per vertex")
            arr.setflags(write=False)
            self.attributes[name] = arr

        self._build_csr()
        if not self.is_connected_subset(np.arange(n)):
            raise GraphError("graph is not connected")

        self.admin_unit: np.ndarray | None = None
        self.unit_names: tuple[str, ...] | None = None
        if admin_unit is not None:
            unit = np.asarray(admin_unit, dtype=np.int64)
            if unit.shape != (n,):
                raise GraphError("admin_unit must assign every vertex to a unit")
            if unit.min() < 0:
                raise GraphError("unit indices must be non-negative")
            n_units = int(unit.max()) + 1
            if len(np.unique(unit)) != n_units:
                raise GraphError("unit indices must be dense 0..|A|-1")
            for a in range(n_units):
                members = np.flatnonzero(unit == a)
                if not self.is_connected_subset(members):
                    name = unit_names[a] if unit_names is not None else a
                    raise GraphError(f"administrative unit {name!r} is not connected")
            unit.setflags(write=False)
            self.admin_unit = unit
            if unit_names is not None:
                if len(unit_names) != n_units:
                    raise GraphError("unit_names must have one entry per unit")
                self.unit_names = tuple(str(u) for u in unit_names)
            else:
                self.unit_names = tuple(str(a) for a in range(n_units))

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------

    @classmethod
    def grid(
        cls,
        rows: int,
        cols: int,
        pop: int | Sequence[int] = 1,
        admin_unit: Sequence[int] | None = None,
        attributes: Mapping[str, Sequence[float]] | None = None,
    ) -> "MapGraph":
        """Rook-adjacency grid with vertices numbered row-major."""
        n = rows * cols
        pops = [pop] * n if isinstance(pop, (int, np.integer)) else list(pop)
        edges = []
        for i in range(rows):
            for j in range(cols):
                v = i * cols + j
                if j + 1 < cols:
                    edges.append((v, v + 1))
                if i + 1 < rows:
                    edges.append((v, v + cols))
        ids = [f"r{i}c{j}" for i in range(rows) for j in range(cols)]
        return cls(ids, pops, edges, attributes=attributes, admin_unit=admin_unit)

    def _build_csr(self) -> None:
        n = self.n_vertices
        deg = np.zeros(n + 1, dtype=np.int64)
        for a, b in self.edges:
            deg[a + 1] += 1
            deg[b + 1] += 1
        indptr = np.cumsum(deg)
        nbr = np.empty(2 * len(self.edges), dtype=np.int64)
        nbr_edge = np.empty(2 * len(self.edges), dtype=np.int64)
        fill = indptr[:-1].copy()
        for e, (a, b) in enumerate(self.edges):
            nbr[fill[a]] = b
            nbr_edge[fill[a]] = e
            fill[a] += 1
            nbr[fill[b]] = a
            nbr_edge[fill[b]] = e
            fill[b] += 1
        self.indptr, self.nbr, self.nbr_edge = indptr, nbr, nbr_edge
        self._edge_index = {(int(a), int(b)): e for e, (a, b) in enumerate(self.edges)}

    # ------------------------------------------------------------------
    # basic queries
    # ------------------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def total_pop(self) -> int:
        return int(self.pop.sum())

    @property
    def n_units(self) -> int:
        return 0 if self.admin_unit is None else len(self.unit_names or ())

    def neighbors(self, v: int) -> np.ndarray:
        return self.nbr[self.indptr[v] : self.indptr[v + 1]]

    def edge_index(self, a: int, b: int) -> int:
        """Index of the edge joining ``a`` and ``b``; ``KeyError`` if absent."""
        return self._edge_index[(min(a, b), max(a, b))]

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self._edge_index

    def is_connected_subset(self, vertices: Iterable[int]) -> bool:
        """Whether the induced subgraph on ``vertices`` is connected (and non-empty)."""
        members = set(int(v) for v in vertices)
        if not members:
            return False
        start = next(iter(members))
        seen = {start}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for w in self.neighbors(u):
                w = int(w)
                if w in members and w not in seen:
                    seen.add(w)
                    queue.append(w)
        return len(seen) == len(members)

    def arrays(self) -> tuple:
        """Flat arrays consumed by the compiled kernels (cached)."""
        cached = getattr(self, "_arrays", None)
        if cached is None:
            unit = (
                np.zeros(self.n_vertices, dtype=np.int64)
                if self.admin_unit is None
                else np.ascontiguousarray(self.admin_unit, dtype=np.int64)
            )
            cached = (
                self.indptr,
                self.nbr,
                self.nbr_edge,
                np.ascontiguousarray(self.edges[:, 0]),
                np.ascontiguousarray(self.edges[:, 1]),
                self.pop.astype(np.float64),
                unit,
                np.int64(max(self.n_units, 1)),
            )
            self._arrays = cached
        return cached


@dataclass(frozen=True)
class DistrictingScheme:
    """``D`` districts sharing ``S`` seats, each with between ``d_min`` and ``d_max`` seats."""

    D: int
    S: int
    d_min: int = 1
    d_max: int = 1

    def __post_init__(self) -> None:
        if min(self.D, self.S, self.d_min, self.d_max) < 1:
            raise ConfigurationError("scheme values must be positive integers")
        if self.d_min > self.d_max:
            raise ConfigurationError("d_min must not exceed d_max")
        if not (self.D * self.d_min <= self.S <= self.D * self.d_max):
            raise ConfigurationError("need D*d_min <= S <= D*d_max")
        # A size in range that is the sum of two others would be ambiguous;
        # that happens exactly when 2*d_min <= d_max.
        if 2 * self.d_min <= self.d_max:
            raise ConfigurationError(
                "invalid scheme: some district size is the sum of two district sizes"
            )

    @classmethod
    def single_member(cls, D: int) -> "DistrictingScheme":
        return cls(D=D, S=D, d_min=1, d_max=1)

    @property
    def is_single_member(self) -> bool:
        return self.d_min == 1 and self.d_max == 1

    def is_district(self, s: int) -> bool:
        return self.d_min <= s <= self.d_max

    def is_multidistrict(self, s: int) -> bool:
        return s > self.d_max


class Plan:
    """A partition of the map into ``r`` connected regions with seat counts.

    Region labels are dense ``0..r-1`` but carry no meaning: two plans that
    differ only by a permutation of labels are equal and hash alike.
    """

    __slots__ = ("assignment", "sizes", "_canon")

    def __init__(self, assignment: Sequence[int], sizes: Sequence[int]) -> None:
        assign = np.array(assignment, dtype=np.int64)
        sizes_t = tuple(int(s) for s in sizes)
        r = len(sizes_t)
        if r == 0:
            raise GraphError("a plan needs at least one region")
        if assign.ndim != 1 or assign.min() < 0 or assign.max() >= r:
            raise GraphError("assignment labels must lie in 0..r-1")
        if len(np.unique(assign)) != r:
            raise GraphError("every region must contain at least one vertex")
        if min(sizes_t) < 1:
            raise GraphError("region sizes must be positive")
        assign.setflags(write=False)
        self.assignment = assign
        self.sizes = sizes_t
        self._canon: tuple | None = None

    @property
    def r(self) -> int:
        return len(self.sizes)

    @property
    def total_seats(self) -> int:
        return sum(self.sizes)

    def size_array(self) -> np.ndarray:
        """Region sizes as an int64 array, the form the compiled kernels take."""
        return np.array(self.sizes, dtype=np.int64)

    def region(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def region_pop(self, graph: MapGraph, k: int) -> int:
        return int(graph.pop[self.assignment == k].sum())

    def canonical(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Relabel regions in order of their smallest vertex."""
        if self._canon is None:
            _, first = np.unique(self.assignment, return_index=True)
            order = np.argsort(first)
            relabel = np.empty(self.r, dtype=np.int64)
            relabel[order] = np.arange(self.r)
            assign = tuple(int(x) for x in relabel[self.assignment])
            sizes = tuple(self.sizes[k] for k in order)
            self._canon = (assign, sizes)
        return self._canon

    def canonical_plan(self) -> "Plan":
        assign, sizes = self.canonical()
        return Plan(assign, sizes)

    def is_contiguous(self, graph: MapGraph) -> bool:
        return all(graph.is_connected_subset(self.region(k)) for k in range(self.r))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Plan):
            return NotImplemented
        return self.canonical() == other.canonical()

    def __hash__(self) -> int:
        return hash(self.canonical())

    def __repr__(self) -> str:
        return f"Plan(assignment={list(self.assignment)}, sizes={list(self.sizes)})"


@dataclass(frozen=True)
class QuotientMultigraph:
    """Multigraph with one node per region; multiplicities count shared edges."""

    n_nodes: int
    multiplicity: Mapping[tuple[int, int], int] = field(default_factory=dict)

    def count(self, i: int, j: int) -> int:
        return self.multiplicity.get((min(i, j), max(i, j)), 0)

    def laplacian(self) -> np.ndarray:
        lap = np.zeros((self.n_nodes, self.n_nodes))
        for (i, j), m in self.multiplicity.items():
            lap[i, j] -= m
            lap[j, i] -= m
            lap[i, i] += m
            lap[j, j] += m
        return lap


def _check_region(plan: Plan, k: int) -> None:
    if not (0 <= k < plan.r):
        raise GraphError(f"region index {k} out of range for a {plan.r}-region plan")


def boundary_edges(graph: MapGraph, plan: Plan, k: int, k2: int) -> list[int]:
    """Edges with one endpoint in region ``k`` and the other in region ``k2``."""
    _check_region(plan, k)
    _check_region(plan, k2)
    if k == k2:
        raise GraphError("boundary requires two distinct regions")
    a = plan.assignment[graph.edges[:, 0]]
    b = plan.assignment[graph.edges[:, 1]]
    hit = ((a == k) & (b == k2)) | ((a == k2) & (b == k))
    return [int(e) for e in np.flatnonzero(hit)]


def adjacent_region_pairs(graph: MapGraph, plan: Plan) -> list[tuple[int, int, int]]:
    """All unordered adjacent region pairs ``(k, k2, boundary count)`` with ``k < k2``."""
    counts: dict[tuple[int, int], int] = {}
    a = plan.assignment[graph.edges[:, 0]]
    b = plan.assignment[graph.edges[:, 1]]
    for x, y in zip(a.tolist(), b.tolist()):
        if x != y:
            key = (min(x, y), max(x, y))
            counts[key] = counts.get(key, 0) + 1
    return [(k, k2, c) for (k, k2), c in sorted(counts.items())]


def merge_regions(graph: MapGraph, plan: Plan, k: int, k2: int) -> Plan:
    """Union regions ``k`` and ``k2``; labels above ``max(k, k2)`` shift down by one."""
    _check_region(plan, k)
    _check_region(plan, k2)
    if k == k2:
        raise GraphError("cannot merge a region with itself")
    if not boundary_edges(graph, plan, k, k2):
        raise GraphError(f"regions {k} and {k2} are not adjacent")
    lo, hi = min(k, k2), max(k, k2)
    assign = plan.assignment.copy()
    assign[assign == hi] = lo
    assign[assign > hi] -= 1
    sizes = list(plan.sizes)
    sizes[lo] += sizes[hi]
    del sizes[hi]
    return Plan(assign, sizes)


def quotient_multigraph(graph: MapGraph, plan: Plan) -> QuotientMultigraph:
    """Plan multigraph: one node per region, one edge per cross-region map edge."""
    mult = {(k, k2): c for k, k2, c in adjacent_region_pairs(graph, plan)}
    return QuotientMultigraph(plan.r, mult)


def edges_removed(graph: MapGraph, plan: Plan) -> tuple[float, int]:
    """Fraction and count of map edges whose endpoints lie in different regions."""
    a = plan.assignment[graph.edges[:, 0]]
    b = plan.assignment[graph.edges[:, 1]]
    count = int(np.count_nonzero(a != b))
    return count / graph.n_edges if graph.n_edges else 0.0, count


def _require_units(graph: MapGraph) -> np.ndarray:
    if graph.admin_unit is None:
        raise ConfigurationError("graph has no administrative units")
    return graph.admin_unit


def _class_components(graph: MapGraph, plan: Plan, unit: np.ndarray) -> dict[tuple[int, int], int]:
    """Number of connected pieces of each non-empty (region, unit) intersection."""
    parent = list(range(graph.n_vertices))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    assign = plan.assignment
    for a, b in graph.edges.tolist():
        if assign[a] == assign[b] and unit[a] == unit[b]:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
    comps: dict[tuple[int, int], set[int]] = {}
    for v in range(graph.n_vertices):
        comps.setdefault((int(assign[v]), int(unit[v])), set()).add(find(v))
    return {key: len(roots) for key, roots in comps.items()}


def admin_splits(graph: MapGraph, plan: Plan) -> int:
    """Sum over units and regions of intersection components, minus the unit count."""
    unit = _require_units(graph)
    return sum(_class_components(graph, plan, unit).values()) - graph.n_units


def units_split(graph: MapGraph, plan: Plan) -> int:
    """Number of administrative units that intersect two or more regions."""
    unit = _require_units(graph)
    touched: dict[int, set[int]] = {}
    for v in range(graph.n_vertices):
        touched.setdefault(int(unit[v]), set()).add(int(plan.assignment[v]))
    return sum(1 for regions in touched.values() if len(regions) > 1)


@dataclass(frozen=True)
class ForestPlan:
    """A plan together with one spanning tree per region.

    ``parent[v]`` is the tree parent of ``v`` (``-1`` at each region root) and
    ``parent_edge[v]`` the index of the edge joining them.
    """

    plan: Plan
    parent: np.ndarray
    parent_edge: np.ndarray

    def tree_edges(self) -> frozenset[int]:
        return frozenset(int(e) for e in self.parent_edge if e >= 0)

    def key(self) -> tuple:
        return (self.plan.canonical(), tuple(sorted(self.tree_edges())))


@dataclass(frozen=True)
class LinkingEdgePlan:
    """A forest plan plus ``r - 1`` edges joining its trees into one spanning tree."""

    forest: ForestPlan
    linking_edges: tuple[int, ...]

    @property
    def plan(self) -> Plan:
        return self.forest.plan

    def key(self) -> tuple:
        return self.forest.key() + (tuple(sorted(self.linking_edges)),)
