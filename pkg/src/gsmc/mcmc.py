"""Merge-split Metropolis-Hastings moves that leave each stage's target invariant.

A move picks an eligible pair of adjacent regions uniformly (in the linking
space, an eligible linking edge), merges them, redraws a spanning tree of the
union and re-splits it with the same cut machinery as the forward kernel.
A pair is eligible when the merged plan is one the previous stage could hold
and the schedule allows splitting it back into the pair's sizes.
"""

from __future__ import annotations

import math

import numpy as np

from . import _core
from ._rng import as_key, stream
from .context import WeightContext
from .graph import ConfigurationError, ForestPlan, LinkingEdgePlan, Plan


def _step(ctx: WeightContext, space: str, plan: Plan, tpar, tpe, links, rng):
    if ctx.spec.space != space:
        raise ConfigurationError(f"context is for the {ctx.spec.space} space, not {space}")
    G, ci, cf, jc = ctx.compiled()
    assign = plan.assignment.copy()
    sizes = plan.size_array()
    acc = _core.mergesplit_step(G, ci, cf, jc, plan.r, assign, sizes, tpar, tpe, links, ctx.K, stream(rng))
    return Plan(assign, sizes), bool(acc)


def mergesplit_step_graph(plan: Plan, ctx: WeightContext, rng) -> tuple[Plan, bool]:
    """One merge-split step in the graph space (top-K re-split with ``ctx.K``)."""
    n = plan.assignment.shape[0]
    new, acc = _step(ctx, "graph", plan, np.full(n, -1, np.int64), np.full(n, -1, np.int64), np.zeros(1, np.int64), rng)
    return (new if acc else plan), acc


def mergesplit_step_forest(forest: ForestPlan, ctx: WeightContext, rng) -> tuple[ForestPlan, bool]:
    """One merge-split step in the forest space."""
    tpar = np.array(forest.parent, dtype=np.int64)
    tpe = np.array(forest.parent_edge, dtype=np.int64)
    new, acc = _step(ctx, "forest", forest.plan, tpar, tpe, np.zeros(1, np.int64), rng)
    if not acc:
        return forest, False
    return ForestPlan(new, tpar, tpe), True


def mergesplit_step_linking(lplan: LinkingEdgePlan, ctx: WeightContext, rng) -> tuple[LinkingEdgePlan, bool]:
    """One merge-split step in the linking-edge space; the new cut edge replaces
    the linking edge that joined the merged pair."""
    forest = lplan.forest
    tpar = np.array(forest.parent, dtype=np.int64)
    tpe = np.array(forest.parent_edge, dtype=np.int64)
    links = np.zeros(max(forest.plan.r, 1), dtype=np.int64)
    links[: len(lplan.linking_edges)] = lplan.linking_edges
    new, acc = _step(ctx, "linking", forest.plan, tpar, tpe, links, rng)
    if not acc:
        return lplan, False
    return LinkingEdgePlan(ForestPlan(new, tpar, tpe), tuple(int(e) for e in links[: forest.plan.r - 1])), True


def estimate_merge_K(plans, ctx: WeightContext, rng, n_probe: int = 20, multiplier: float = 1.0) -> int:
    """Estimate K for graph-space moves from trees drawn on merged eligible pairs."""
    G, ci, cf, _ = ctx.compiled()
    assign = np.stack([p.assignment for p in plans])
    sizes = np.stack([p.size_array() for p in plans])
    best = _core.probe_merge_ok(G, ci, cf, plans[0].r, assign, sizes, np.cumsum(np.ones(len(plans))), n_probe,
                                as_key(rng))
    return max(1, math.ceil(best * multiplier))
