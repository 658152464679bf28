"""Minimum-variance incremental weights and normalizing-constant estimates.

Each incremental weight is the inverse of a sum over the ways the current
particle could have been produced: every admissible merge of two regions
(or, in the linking space, every linking edge) contributes the probability
of selecting the merged region and splitting it back, times the ratio of
target densities.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import _core
from .context import CUT_KINDS, CutRule, WeightContext
from .graph import ConfigurationError, ForestPlan, GraphError, LinkingEdgePlan, MapGraph, Plan
from .target import PopulationBounds, bounds_config
from .trees import RegionTree, oriented_pairs


def _require_balanced(ctx: WeightContext, plan: Plan) -> None:
    pops = np.bincount(plan.assignment, weights=ctx.graph.pop, minlength=plan.r)
    for k in range(plan.r):
        if not ctx.bounds.is_balanced(pops[k], int(plan.sizes[k])):
            raise GraphError(f"region {k} is unbalanced; weights are defined only for balanced plans")


def _weight(ctx: WeightContext, space: str, plan: Plan, tpar, tpe, links) -> float:
    if ctx.spec.space != space:
        raise ConfigurationError(f"context is for the {ctx.spec.space} space, not {space}")
    _require_balanced(ctx, plan)
    G, ci, cf, jc = ctx.compiled()
    return float(_core.log_weight(G, ci, cf, jc, plan.r, plan.assignment, plan.size_array(), tpar, tpe, links, ctx.K))


def log_optimal_weight_graph(plan: Plan, ctx: WeightContext) -> float:
    """log incremental weight of a graph-space plan (uses ``ctx.K``)."""
    dummy = np.full(plan.assignment.shape[0], -1, dtype=np.int64)
    return _weight(ctx, "graph", plan, dummy, dummy, np.zeros(1, dtype=np.int64))


def log_optimal_weight_forest(forest: ForestPlan, ctx: WeightContext) -> float:
    """log incremental weight of a forest-space plan."""
    return _weight(
        ctx, "forest", forest.plan,
        np.asarray(forest.parent, dtype=np.int64), np.asarray(forest.parent_edge, dtype=np.int64),
        np.zeros(1, dtype=np.int64),
    )


def log_optimal_weight_linking(lplan: LinkingEdgePlan, ctx: WeightContext) -> float:
    """log incremental weight of a linking-edge plan."""
    links = np.zeros(max(lplan.plan.r, 1), dtype=np.int64)
    links[: len(lplan.linking_edges)] = lplan.linking_edges
    forest = lplan.forest
    return _weight(
        ctx, "linking", forest.plan,
        np.asarray(forest.parent, dtype=np.int64), np.asarray(forest.parent_edge, dtype=np.int64), links,
    )


def log_effective_boundary(
    graph: MapGraph,
    tree_a: RegionTree,
    tree_b: RegionTree,
    cut_rule: CutRule,
    allowed_sizes: Sequence[tuple[int, int]],
    pop_bounds: PopulationBounds,
    hierarchical: bool = False,
) -> float:
    """log of the summed probability, over boundary edges ``e`` between the
    two trees, that ``cut_rule`` cuts ``tree_a + e + tree_b`` back into them.

    ``allowed_sizes`` are the unordered size pairs the schedule allows for
    the merged region.
    """
    if cut_rule.kind == "top-k":
        raise ConfigurationError("the effective boundary needs an explicit cut distribution")
    n = graph.n_vertices
    lab = np.full(n, 2, dtype=np.int64)
    lab[list(tree_a.vertices)] = 0
    lab[list(tree_b.vertices)] = 1
    if set(tree_a.vertices) & set(tree_b.vertices):
        raise GraphError("trees overlap")
    tpar = np.full(n, -1, dtype=np.int64)
    tpe = np.full(n, -1, dtype=np.int64)
    for tree in (tree_a, tree_b):
        for v in tree.vertices:
            tpar[v] = tree.parent[v]
            tpe[v] = tree.parent_edge[v]
    G = graph.arrays()
    ident = _core.identity_map(3)
    cnt, _ = _core.pair_counts(G, lab, ident, 3)
    if cnt[0, 1] == 0:
        raise GraphError("trees are not adjacent")
    pairs = oriented_pairs(allowed_sizes)
    A = np.array([p[0] for p in pairs], dtype=np.int64)
    B = np.array([p[1] for p in pairs], dtype=np.int64)
    ci = np.zeros(_core.N_CFG_I, dtype=np.int64)
    ci[_core.I_CUT] = CUT_KINDS.index(cut_rule.kind)
    cf = bounds_config(pop_bounds, alpha=cut_rule.alpha)
    pres = _core.presence(G, lab, ident, 3)
    return float(
        _core.log_effective_boundary(G, lab, ident, tpar, tpe, 0, 1, tree_a.size, tree_b.size, A, B, len(pairs),
                                     ci, cf, hierarchical, pres)
    )


def normalizing_constant_estimate(
    log_weights: Sequence[Sequence[float]],
    acceptance_rates: Sequence[float] | None = None,
) -> np.ndarray:
    """Per-stage log ratio estimates ``log(Z_r / Z_{r-1})``.

    Each stage contributes the log-mean-exp of its incremental weights.  When
    proposals were rejected and redrawn, pass the per-stage acceptance rates
    (accepted / attempted); the estimate then adds their logs, since the
    retained proposals are conditioned on acceptance.  Summing the result and
    adding ``log gamma_1`` estimates ``log Z_r``.
    """
    out = []
    for i, w in enumerate(log_weights):
        w = np.asarray(w, dtype=float)
        if w.size == 0:
            raise ValueError("each stage needs at least one weight")
        if not np.isfinite(w).any():
            raise ValueError(f"stage {i}: all weights are -inf (degenerate ensemble)")
        val = float(logsumexp(w) - math.log(w.size))
        if acceptance_rates is not None:
            val += math.log(acceptance_rates[i])
        out.append(val)
    return np.array(out)
