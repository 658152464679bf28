"""Target densities, population bounds, soft score terms and splitting schedules."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _core
from .graph import (
    ConfigurationError,
    DistrictingScheme,
    ForestPlan,
    LinkingEdgePlan,
    MapGraph,
    Plan,
)

SPACES = ("graph", "forest", "linking")
SCHEDULE_KINDS = ("district-only", "any-valid")

# Registered soft score components, in the order of the compiled coefficient vector.
SOFT_TERMS = ("admin_splits", "total_splits")

BALANCE_RTOL = 1e-9


@dataclass(frozen=True)
class PopulationBounds:
    """Per-seat population bounds ``[lower, upper]``; ``target`` is pop(V) / S."""

    lower: float
    upper: float
    target: float

    def __post_init__(self) -> None:
        if not (0 <= self.lower <= self.target <= self.upper):
            raise ConfigurationError(
                f"per-seat bounds [{self.lower}, {self.upper}] must contain the ideal {self.target}"
            )

    @classmethod
    def exact(cls, graph: MapGraph, seats: int) -> "PopulationBounds":
        t = graph.total_pop / seats
        return cls(t, t, t)

    @classmethod
    def tolerance(cls, graph: MapGraph, seats: int, tol: float) -> "PopulationBounds":
        """Bounds allowing each region a relative deviation of ``tol`` per seat."""
        t = graph.total_pop / seats
        return cls(t * (1 - tol), t * (1 + tol), t)

    def is_balanced(self, pop: float, s: int) -> bool:
        hi = s * self.upper
        tol = BALANCE_RTOL * max(1.0, hi)
        return s * self.lower - tol <= pop <= hi + tol

    def deviation(self, pop: float, s: int) -> float:
        return abs(pop / (s * self.target) - 1.0)


@dataclass(frozen=True)
class SplittingSchedule:
    """Which size pairs a multidistrict may be split into."""

    kind: str
    scheme: DistrictingScheme

    def __post_init__(self) -> None:
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}; expected one of {SCHEDULE_KINDS}")
        if self.kind == "any-valid" and not self.scheme.is_single_member:
            raise ConfigurationError("the any-valid schedule is only available for single-member schemes")


@dataclass(frozen=True)
class TargetSpec:
    """Target distribution over plans.

    ``soft_terms`` maps registered component names to coefficients of the
    score ``J``.  Contiguity and population balance are always enforced.
    """

    pop_bounds: PopulationBounds
    rho: float = 1.0
    soft_terms: Mapping[str, float] = field(default_factory=dict)
    space: str = "graph"
    hierarchical: bool = False

    def __post_init__(self) -> None:
        if self.space not in SPACES:
            raise ConfigurationError(f"unknown space {self.space!r}; expected one of {SPACES}")
        if self.rho < 0:
            raise ConfigurationError("rho must be non-negative")
        for name, coef in self.soft_terms.items():
            if name not in SOFT_TERMS:
                raise ConfigurationError(f"unknown soft term {name!r}; registered terms: {SOFT_TERMS}")
            if not math.isfinite(coef):
                raise ConfigurationError(f"soft term {name!r} has a non-finite coefficient")
        if abs(self.rho - 1.0) > 0.3:
            warnings.warn(
                "rho far from 1 makes the proposal a poor match for the target; expect low effective sample size",
                stacklevel=2,
            )

    def j_coefficients(self) -> np.ndarray:
        return np.array([float(self.soft_terms.get(name, 0.0)) for name in SOFT_TERMS])

    @property
    def has_soft_terms(self) -> bool:
        return any(c != 0.0 for c in self.soft_terms.values())


def check_scheme_bounds(graph: MapGraph, scheme: DistrictingScheme, bounds: PopulationBounds) -> None:
    ideal = graph.total_pop / scheme.S
    if not math.isclose(bounds.target, ideal, rel_tol=1e-12):
        raise ConfigurationError(f"population bounds target {bounds.target} differs from pop(V)/S = {ideal}")


def schedule_pairs(
    schedule: SplittingSchedule, r: int, s: int, current_sizes: Sequence[int]
) -> list[tuple[int, int]]:
    """Allowed unordered size pairs ``(s1 <= s2)`` for splitting a size-``s`` region.

    ``current_sizes`` lists the sizes of all ``r`` regions of the current
    plan, including the region being split.
    """
    sizes = [int(x) for x in current_sizes]
    if len(sizes) != r:
        raise ValueError(f"expected {r} region sizes, got {len(sizes)}")
    if s not in sizes:
        raise ValueError(f"size {s} is not among the current region sizes {sizes}")
    scheme = schedule.scheme
    if not scheme.is_multidistrict(s):
        raise ValueError(f"a region of size {s} is not a multidistrict")
    k = sizes.index(s)
    ci = scheme_config(scheme, schedule.kind)
    out1 = np.empty(s + 2, dtype=np.int64)
    out2 = np.empty(s + 2, dtype=np.int64)
    n = _core.schedule_unordered(np.array(sizes, dtype=np.int64), r, k, ci, out1, out2)
    return [(int(out1[i]), int(out2[i])) for i in range(n)]


def scheme_config(scheme: DistrictingScheme, kind: str = "district-only") -> np.ndarray:
    """Integer configuration vector carrying the scheme and schedule fields."""
    ci = np.zeros(_core.N_CFG_I, dtype=np.int64)
    ci[_core.I_D] = scheme.D
    ci[_core.I_S] = scheme.S
    ci[_core.I_DMIN] = scheme.d_min
    ci[_core.I_DMAX] = scheme.d_max
    ci[_core.I_KIND] = SCHEDULE_KINDS.index(kind)
    ci[_core.I_K] = 1
    ci[_core.I_RHO1] = 1
    return ci


def bounds_config(bounds: PopulationBounds, alpha: float = 0.0, rho: float = 1.0) -> np.ndarray:
    cf = np.zeros(_core.N_CFG_F)
    cf[_core.F_PLO] = bounds.lower
    cf[_core.F_PHI] = bounds.upper
    cf[_core.F_PBAR] = bounds.target
    cf[_core.F_RHO] = rho
    cf[_core.F_ALPHA] = alpha
    return cf


def score_j(graph: MapGraph, plan: Plan, spec: TargetSpec) -> float:
    """Soft score ``J`` of a plan (zero without soft terms)."""
    if not spec.has_soft_terms:
        return 0.0
    if graph.admin_unit is None:
        raise ConfigurationError("split-counting soft terms need administrative units on the graph")
    return float(
        _core.score_j(graph.arrays(), plan.assignment, _core.identity_map(plan.r), plan.r, spec.j_coefficients())
    )


def region_log_taus(graph: MapGraph, plan: Plan, hierarchical: bool = False) -> np.ndarray:
    """log spanning-tree count of every region (hierarchical count if requested)."""
    return _core.region_log_taus(graph.arrays(), hierarchical, plan.assignment, plan.r)


def _regions_balanced(graph: MapGraph, plan: Plan, bounds: PopulationBounds) -> bool:
    pops = np.bincount(plan.assignment, weights=graph.pop, minlength=plan.r)
    return all(bounds.is_balanced(pops[k], int(plan.sizes[k])) for k in range(plan.r))


def forest_is_valid(graph: MapGraph, forest: ForestPlan) -> bool:
    """Whether ``forest`` holds exactly one spanning tree per region."""
    plan = forest.plan
    parent = np.asarray(forest.parent)
    pedge = np.asarray(forest.parent_edge)
    n = graph.n_vertices
    if parent.shape != (n,) or pedge.shape != (n,):
        return False
    roots = np.zeros(plan.r, dtype=np.int64)
    for v in range(n):
        p = int(parent[v])
        if p < 0:
            roots[plan.assignment[v]] += 1
            continue
        if plan.assignment[p] != plan.assignment[v]:
            return False
        e = int(pedge[v])
        if not (0 <= e < graph.n_edges) or {int(graph.edges[e, 0]), int(graph.edges[e, 1])} != {v, p}:
            return False
    if not np.all(roots == 1):
        return False
    # every vertex must reach its root without revisiting
    state = np.zeros(n, dtype=np.int8)
    for v in range(n):
        path = []
        x = v
        while x >= 0 and state[x] == 0:
            state[x] = 1
            path.append(x)
            x = int(parent[x])
        if x >= 0 and state[x] == 1:
            return False
        for y in path:
            state[y] = 2
    return True


def linking_is_valid(graph: MapGraph, lplan: LinkingEdgePlan) -> bool:
    """Whether the linking edges join the region trees into one spanning tree."""
    plan = lplan.plan
    if len(lplan.linking_edges) != plan.r - 1:
        return False
    parent = list(range(plan.r))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in lplan.linking_edges:
        a = int(plan.assignment[graph.edges[e, 0]])
        b = int(plan.assignment[graph.edges[e, 1]])
        ra, rb = find(a), find(b)
        if ra == rb:
            return False
        parent[ra] = rb
    return True


def log_linking_count(graph: MapGraph, plan: Plan, hierarchical: bool = False) -> float:
    """log number of linking-edge sets (spanning trees of the region multigraph)."""
    G = graph.arrays()
    ident = _core.identity_map(plan.r)
    cnt, within = _core.pair_counts(G, plan.assignment, ident, plan.r)
    return float(_core.log_linking_count(cnt, within, plan.r, ident, hierarchical))


def log_target_density(
    graph: MapGraph,
    obj: Plan | ForestPlan | LinkingEdgePlan,
    spec: TargetSpec,
    schedule: SplittingSchedule | None = None,
) -> float:
    """Unnormalized log target density of a plan in the space named by ``spec``.

    Returns ``-inf`` when a hard constraint fails: contiguity, balance,
    hierarchy (if required), or, when ``schedule`` is given, a region-size
    multiset from which no complete plan is reachable.
    """
    expected = {"graph": Plan, "forest": ForestPlan, "linking": LinkingEdgePlan}[spec.space]
    if not isinstance(obj, expected):
        raise ValueError(f"{type(obj).__name__} does not live in the {spec.space} space")
    plan = obj if isinstance(obj, Plan) else obj.plan
    if plan.assignment.shape[0] != graph.n_vertices:
        raise ValueError("plan does not match the graph")
    if not plan.is_contiguous(graph) or not _regions_balanced(graph, plan, spec.pop_bounds):
        return -math.inf
    if schedule is not None:
        ci = scheme_config(schedule.scheme, schedule.kind)
        if plan.total_seats != schedule.scheme.S or not _core.reachable(plan.size_array(), plan.r, ci):
            return -math.inf
    hier = spec.hierarchical
    if hier:
        if graph.admin_unit is None:
            raise ConfigurationError("hierarchical targets need administrative units on the graph")
        if not _core.hier_check(graph.arrays(), plan.assignment, _core.identity_map(plan.r), plan.r, -1):
            return -math.inf
    ltau = region_log_taus(graph, plan, hier)
    value = -score_j(graph, plan, spec) + spec.rho * float(ltau.sum())
    if spec.space == "graph":
        return value
    if not forest_is_valid(graph, obj if isinstance(obj, ForestPlan) else obj.forest):
        return -math.inf
    value -= float(ltau.sum())
    if spec.space == "forest":
        return value
    if not linking_is_valid(graph, obj):
        return -math.inf
    return value - log_linking_count(graph, plan, hier)


def is_reachable(schedule: SplittingSchedule, sizes: Sequence[int]) -> bool:
    """Whether a partial plan with these region sizes can appear during sampling."""
    ci = scheme_config(schedule.scheme, schedule.kind)
    arr = np.asarray(sizes, dtype=np.int64)
    return bool(_core.reachable(arr, arr.shape[0], ci))

