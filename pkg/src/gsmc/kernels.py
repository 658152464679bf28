"""Forward splitting kernels: multidistrict selection, tree-cut splits in the
three sampling spaces, K estimation and closed-form forward probabilities."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import _core
from ._rng import as_key, stream
from .context import CUT_KINDS, PHI_MODES, CutRule, PhiRule
from .graph import (
    DistrictingScheme,
    ForestPlan,
    GraphError,
    LinkingEdgePlan,
    MapGraph,
    Plan,
)
from .target import PopulationBounds, SplittingSchedule, bounds_config, scheme_config

SPACE_CODES = {"graph": _core.SPACE_GRAPH, "forest": _core.SPACE_FOREST, "linking": _core.SPACE_LINKING}


def _config(
    schedule: SplittingSchedule,
    pop_bounds: PopulationBounds,
    space: str,
    rule: CutRule,
    K: int = 1,
    phi: PhiRule | None = None,
    hierarchical: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    rule.check_space(space)
    ci = scheme_config(schedule.scheme, schedule.kind)
    ci[_core.I_SPACE] = SPACE_CODES[space]
    ci[_core.I_CUT] = CUT_KINDS.index(rule.kind)
    ci[_core.I_K] = K
    ci[_core.I_HIER] = int(hierarchical)
    if phi is not None:
        ci[_core.I_PHI] = PHI_MODES.index(phi.mode)
    return ci, bounds_config(pop_bounds, alpha=rule.alpha)


def select_multidistrict(plan: Plan, phi: PhiRule, scheme: DistrictingScheme, rng) -> tuple[int, float]:
    """Draw the region to split next; returns its index and log selection probability."""
    ci = scheme_config(scheme)
    ci[_core.I_PHI] = PHI_MODES.index(phi.mode)
    k = int(_core.select_multidistrict(plan.size_array(), plan.r, ci, stream(rng)))
    if k < 0:
        raise GraphError("plan has no multidistrict left to split")
    return k, float(_core.log_phi(plan.size_array(), plan.r, k, ci))


def log_selection_prob(plan: Plan, k: int, phi: PhiRule, scheme: DistrictingScheme) -> float:
    ci = scheme_config(scheme)
    ci[_core.I_PHI] = PHI_MODES.index(phi.mode)
    return float(_core.log_phi(plan.size_array(), plan.r, k, ci))


def _check_splittable(plan: Plan, k: int, schedule: SplittingSchedule) -> None:
    if not 0 <= k < plan.r:
        raise GraphError(f"region index {k} out of range")
    if not schedule.scheme.is_multidistrict(int(plan.sizes[k])):
        raise GraphError(f"region {k} of size {plan.sizes[k]} is not a multidistrict")
    ci = scheme_config(schedule.scheme, schedule.kind)
    _, _, n = _core.schedule_oriented(plan.size_array(), plan.r, k, ci)
    if n == 0:
        raise GraphError(f"the schedule allows no split of region {k}")


def _split(graph, plan, k, ci, cf, K, rng, tpar, tpe, links):
    n = graph.n_vertices
    r = plan.r
    out_assign = np.empty(n, dtype=np.int64)
    out_sizes = np.empty(r + 1, dtype=np.int64)
    out_tpar = np.full(n, -1, dtype=np.int64)
    out_tpe = np.full(n, -1, dtype=np.int64)
    out_links = np.zeros(max(r, 1), dtype=np.int64)
    ok = _core.split_region(
        graph.arrays(), ci, cf, r, k, plan.assignment, plan.size_array(), tpar, tpe, links, K, stream(rng),
        out_assign, out_sizes, out_tpar, out_tpe, out_links,
    )
    if not ok:
        return None
    return Plan(out_assign, out_sizes), out_tpar, out_tpe, out_links


def split_graph_space(
    graph: MapGraph,
    plan: Plan,
    k: int,
    K: int,
    schedule: SplittingSchedule,
    pop_bounds: PopulationBounds,
    rng,
    hierarchical: bool = False,
) -> Plan | None:
    """Split region ``k`` by one of the ``K`` lowest-deviation cuts of a uniform tree.

    Returns ``None`` when the chosen cut is unbalanced (rejection).
    """
    _check_splittable(plan, k, schedule)
    ci, cf = _config(schedule, pop_bounds, "graph", CutRule.top_k(K), K, hierarchical=hierarchical)
    n = graph.n_vertices
    dummy = np.full(n, -1, dtype=np.int64)
    out = _split(graph, plan, k, ci, cf, K, rng, dummy, dummy, np.zeros(1, dtype=np.int64))
    return None if out is None else out[0]


def split_forest_space(
    graph: MapGraph,
    forest: ForestPlan,
    k: int,
    cut_rule: CutRule,
    schedule: SplittingSchedule,
    pop_bounds: PopulationBounds,
    rng,
    hierarchical: bool = False,
) -> ForestPlan | None:
    """Redraw the tree of region ``k`` and cut it with ``cut_rule``; the two
    subtrees become the new region trees."""
    _check_splittable(forest.plan, k, schedule)
    ci, cf = _config(schedule, pop_bounds, "forest", cut_rule, hierarchical=hierarchical)
    out = _split(
        graph, forest.plan, k, ci, cf, 1, rng,
        np.asarray(forest.parent, dtype=np.int64), np.asarray(forest.parent_edge, dtype=np.int64),
        np.zeros(1, dtype=np.int64),
    )
    if out is None:
        return None
    return ForestPlan(out[0], out[1], out[2])


def split_linking_space(
    graph: MapGraph,
    lplan: LinkingEdgePlan,
    k: int,
    cut_rule: CutRule,
    schedule: SplittingSchedule,
    pop_bounds: PopulationBounds,
    rng,
    hierarchical: bool = False,
) -> LinkingEdgePlan | None:
    """As :func:`split_forest_space`, keeping the cut edge as a new linking edge."""
    forest = lplan.forest
    _check_splittable(forest.plan, k, schedule)
    ci, cf = _config(schedule, pop_bounds, "linking", cut_rule, hierarchical=hierarchical)
    r = forest.plan.r
    links = np.zeros(max(r, 1), dtype=np.int64)
    links[: r - 1] = lplan.linking_edges
    ci[_core.I_SPACE] = _core.SPACE_LINKING
    out = _split(
        graph, forest.plan, k, ci, cf, 1, rng,
        np.asarray(forest.parent, dtype=np.int64), np.asarray(forest.parent_edge, dtype=np.int64), links,
    )
    if out is None:
        return None
    return LinkingEdgePlan(ForestPlan(out[0], out[1], out[2]), tuple(int(e) for e in out[3][:r]))


def estimate_K(
    graph: MapGraph,
    plans: Sequence[Plan],
    schedule: SplittingSchedule,
    pop_bounds: PopulationBounds,
    rng,
    n_probe: int = 20,
    phi: PhiRule | None = None,
    multiplier: float = 1.0,
    weights: Sequence[float] | None = None,
    hierarchical: bool = False,
) -> int:
    """Estimate the largest number of balanced cuts a split tree can have.

    Draws ``n_probe`` trees on multidistricts selected from particles drawn
    in proportion to ``weights`` and returns the largest balanced-cut count
    seen (times ``multiplier``, rounded up), never less than 1.
    """
    if n_probe < 1:
        raise ValueError("n_probe must be at least 1")
    if not plans:
        raise ValueError("need at least one plan")
    r = plans[0].r
    ci, cf = _config(schedule, pop_bounds, "graph", CutRule.top_k(1), phi=phi or PhiRule(), hierarchical=hierarchical)
    assign = np.stack([p.assignment for p in plans])
    sizes = np.stack([p.size_array() for p in plans])
    w = np.ones(len(plans)) if weights is None else np.asarray(weights, dtype=float)
    best = _core.probe_split_ok(graph.arrays(), ci, cf, r, assign, sizes, np.cumsum(w), n_probe, as_key(rng))
    return max(1, math.ceil(best * multiplier))


def _match_split(old: Plan, new: Plan):
    """Locate the single region of ``old`` split into two regions of ``new``.

    Returns ``(l, a, b)`` or ``None`` if the plans are not one split apart.
    """
    if new.r != old.r + 1 or old.assignment.shape != new.assignment.shape:
        return None
    owner: dict[int, int] = {}
    for v in range(old.assignment.shape[0]):
        nb, ol = int(new.assignment[v]), int(old.assignment[v])
        if owner.setdefault(nb, ol) != ol:
            return None
    children: dict[int, list[int]] = {}
    for nb, ol in owner.items():
        children.setdefault(ol, []).append(nb)
    split = [ol for ol, ch in children.items() if len(ch) == 2]
    if len(split) != 1 or len(children) != old.r:
        return None
    ell = split[0]
    a, b = sorted(children[ell])
    for ol, ch in children.items():
        if ol != ell and int(old.sizes[ol]) != int(new.sizes[ch[0]]):
            return None
    if int(old.sizes[ell]) != int(new.sizes[a]) + int(new.sizes[b]):
        return None
    return ell, a, b


def forward_log_prob(
    graph: MapGraph,
    space: str,
    old: Plan | ForestPlan | LinkingEdgePlan,
    new: Plan | ForestPlan | LinkingEdgePlan,
    phi: PhiRule,
    cut_rule_or_K: CutRule | int,
    schedule: SplittingSchedule,
    pop_bounds: PopulationBounds,
    hierarchical: bool = False,
) -> float:
    """Closed-form log probability that one forward split turns ``old`` into ``new``.

    Graph space assumes ``K`` bounds the balanced-cut count of every tree.
    Returns ``-inf`` if ``new`` cannot be produced from ``old``.
    """
    if space == "graph":
        rule = CutRule.top_k(int(cut_rule_or_K))
        K = int(cut_rule_or_K)
        old_plan, new_plan = old, new
    else:
        rule = cut_rule_or_K
        K = 1
        old_plan, new_plan = old.plan, new.plan
    ci, cf = _config(schedule, pop_bounds, space, rule, K, phi=phi, hierarchical=hierarchical)
    m = _match_split(old_plan, new_plan)
    if m is None:
        return -math.inf
    ell, a, b = m
    sa, sb = int(new_plan.sizes[a]), int(new_plan.sizes[b])
    if not schedule.scheme.is_multidistrict(int(old_plan.sizes[ell])):
        return -math.inf
    A, B, npairs = _core.schedule_oriented(old_plan.size_array(), old_plan.r, ell, ci)
    if not any(A[j] == sa and B[j] == sb for j in range(npairs)):
        return -math.inf
    G = graph.arrays()
    n = graph.n_vertices
    lab = np.full(n, 2, dtype=np.int64)
    lab[new_plan.assignment == a] = 0
    lab[new_plan.assignment == b] = 1
    ident = _core.identity_map(3)
    for label, s in ((0, sa), (1, sb)):
        verts = np.nonzero(lab == label)[0]
        if not graph.is_connected_subset(verts.tolist()):
            return -math.inf
        if not pop_bounds.is_balanced(float(graph.pop[verts].sum()), s):
            return -math.inf
    if hierarchical and not _core.hier_check(G, lab, _core.merge_map(3, 0, 1), 3, 0):
        return -math.inf
    loc = np.empty(n, dtype=np.int64)

    def ltau(label, rmap):
        verts = np.nonzero(rmap[lab] == label)[0].astype(np.int64)
        return float(_core.log_tau_region(G, hierarchical, lab, rmap, label, verts, verts.size, loc))

    lphi = float(_core.log_phi(old_plan.size_array(), old_plan.r, ell, ci))
    l_h = ltau(0, _core.merge_map(3, 0, 1))
    if space == "graph":
        cnt, within = _core.pair_counts(G, lab, ident, 3)
        c = int(cnt[0, 1])
        if hierarchical:
            c = int(_core.eta_boundary_count(0, 1, cnt, within, _core.presence(G, lab, ident, 3)))
        if c == 0:
            return -math.inf
        return lphi - math.log(K) + ltau(0, ident) + ltau(1, ident) - l_h + math.log(c)
    old_forest = old if isinstance(old, ForestPlan) else old.forest
    new_forest = new if isinstance(new, ForestPlan) else new.forest
    tpar = np.asarray(new_forest.parent, dtype=np.int64)
    tpe = np.asarray(new_forest.parent_edge, dtype=np.int64)
    others = lab == 2
    if not (
        np.array_equal(tpar[others], np.asarray(old_forest.parent)[others])
        and np.array_equal(tpe[others], np.asarray(old_forest.parent_edge)[others])
    ):
        return -math.inf
    if space == "forest":
        pres = _core.presence(G, lab, ident, 3)
        effb = _core.log_effective_boundary(G, lab, ident, tpar, tpe, 0, 1, sa, sb, A, B, npairs, ci, cf,
                                            hierarchical, pres)
        return lphi - l_h + float(effb)
    added = set(new.linking_edges) - set(old.linking_edges)
    if len(added) != 1 or not set(old.linking_edges) <= set(new.linking_edges):
        return -math.inf
    (e,) = added
    u, v = int(graph.edges[e, 0]), int(graph.edges[e, 1])
    if lab[u] == 1:
        u, v = v, u
    if lab[u] != 0 or lab[v] != 1:
        return -math.inf
    lp = _core.log_pcut_joined(G, lab, ident, tpar, tpe, 0, 1, u, v, e, sa, sb, A, B, npairs, ci, cf)
    return lphi - l_h + float(lp)
