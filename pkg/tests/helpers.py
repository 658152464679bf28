"""Independent brute-force oracles shared by the tests.

Nothing here calls the package's compiled kernels: trees are found by
testing every edge subset, plans by testing every vertex labelling.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter

import numpy as np
from scipy import stats

from gsmc.diagnostics import lineage_standard_error
from gsmc.graph import ForestPlan, MapGraph, Plan


def is_spanning_tree(n: int, edges: list[tuple[int, int]]) -> bool:
    if len(edges) != n - 1:
        return False
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra == rb:
            return False
        parent[ra] = rb
    return True


def spanning_trees(n: int, edges: list[tuple[int, int]]) -> list[frozenset[int]]:
    """Every spanning tree as a set of edge positions (parallel edges are distinct)."""
    if n == 1:
        return [frozenset()]
    out = []
    for combo in itertools.combinations(range(len(edges)), n - 1):
        if is_spanning_tree(n, [edges[i] for i in combo]):
            out.append(frozenset(combo))
    return out


def region_trees(graph: MapGraph, vertices) -> list[frozenset[int]]:
    """Spanning trees of the induced subgraph, as sets of graph edge indices."""
    verts = sorted(vertices)
    loc = {v: i for i, v in enumerate(verts)}
    sub = [(e, loc[a], loc[b]) for e, (a, b) in enumerate(graph.edges.tolist()) if a in loc and b in loc]
    trees = spanning_trees(len(verts), [(a, b) for _, a, b in sub])
    return [frozenset(sub[i][0] for i in t) for t in trees]


def components(n_vertices: int, vertices, edges) -> list[set[int]]:
    adj: dict[int, list[int]] = {v: [] for v in vertices}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen: set[int] = set()
    comps = []
    for v in vertices:
        if v in seen:
            continue
        stack, comp = [v], {v}
        seen.add(v)
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    comp.add(w)
                    stack.append(w)
        comps.append(comp)
    return comps


def connected(graph: MapGraph, vertices) -> bool:
    vs = set(vertices)
    es = [(a, b) for a, b in graph.edges.tolist() if a in vs and b in vs]
    return len(components(graph.n_vertices, vs, es)) == 1


def brute_force_plans(graph: MapGraph, D: int, S: int, dmin: int, dmax: int, lo: float, hi: float) -> set:
    """Canonical forms of every contiguous plan whose regions hold dmin..dmax
    seats with populations in [s*lo, s*hi], found by trying all labellings."""
    V = graph.n_vertices
    pop = graph.pop.tolist()
    out = set()

    def rgs(prefix, used):
        if len(prefix) == V:
            if used == D:
                yield tuple(prefix)
            return
        for k in range(min(used + 1, D)):
            prefix.append(k)
            yield from rgs(prefix, max(used, k + 1))
            prefix.pop()

    for labels in rgs([], 0):
        regions = [[v for v in range(V) if labels[v] == k] for k in range(D)]
        if not all(connected(graph, r) for r in regions):
            continue
        pops = [sum(pop[v] for v in r) for r in regions]
        options = [
            [s for s in range(dmin, dmax + 1) if s * lo - 1e-9 <= p <= s * hi + 1e-9] for p in pops
        ]
        for sizes in itertools.product(*options):
            if sum(sizes) == S:
                out.add(Plan(labels, sizes).canonical())
    return out


def chi_square_p(counts: Counter, probs: dict) -> float:
    """Goodness-of-fit p-value of observed ``counts`` against ``probs``."""
    keys = sorted(probs)
    unexpected = set(counts) - set(keys)
    if unexpected:
        return 0.0
    obs = np.array([counts.get(k, 0) for k in keys], dtype=float)
    exp = np.array([probs[k] for k in keys], dtype=float) * obs.sum()
    if len(keys) == 1:
        return 1.0
    return float(stats.chisquare(obs, exp).pvalue)


def bin_z(estimate: float, truth: float, se: float, ess: float) -> float:
    """Standardized error of one estimated probability.

    Bins with no particles have no empirical spread; their error is scaled
    by the binomial standard error at the true probability and the ensemble's
    effective sample size.
    """
    if se <= 0:
        se = math.sqrt(max(truth * (1 - truth), 0.0) / ess)
    if se <= 0:
        return 0.0 if abs(estimate - truth) < 1e-9 else math.inf
    return abs(estimate - truth) / se


def compare_to_exact(ens, exact) -> tuple[float, float]:
    """Largest plan-probability z-score and edges-removed total variation."""
    graph = ens.graph
    index = exact.index()
    w = ens.weights
    ess = 1.0 / np.sum(w**2)
    rows = np.array([index.get(p.canonical(), -1) for p in ens.plans()])
    assert (rows >= 0).all(), "sampler produced a plan outside the enumerated support"
    probs = exact.probabilities
    worst = 0.0
    for j in range(len(exact)):
        f = (rows == j).astype(float)
        se = lineage_standard_error(f, w, ens.ancestry) if f.any() else 0.0
        worst = max(worst, bin_z(float(w @ f), float(probs[j]), se, ess))
    cut = (ens.assignment[:, graph.edges[:, 0]] != ens.assignment[:, graph.edges[:, 1]]).sum(axis=1)
    hist = exact.edges_removed_histogram(graph)
    keys = set(hist) | set(cut.tolist())
    tv = 0.5 * sum(abs(float(w[cut == c].sum()) - hist.get(c, 0.0)) for c in keys)
    return worst, tv


def rooted_arrays(graph: MapGraph, edge_set, n_vertices: int, roots) -> tuple[np.ndarray, np.ndarray]:
    """Parent and parent-edge arrays of a forest given by edge indices."""
    adj: dict[int, list[tuple[int, int]]] = {v: [] for v in range(n_vertices)}
    for e in edge_set:
        a, b = graph.edges[e]
        adj[int(a)].append((int(b), e))
        adj[int(b)].append((int(a), e))
    parent = np.full(n_vertices, -1, dtype=np.int64)
    pedge = np.full(n_vertices, -1, dtype=np.int64)
    for root in roots:
        stack, seen = [root], {root}
        while stack:
            u = stack.pop()
            for w, e in adj[u]:
                if w not in seen:
                    seen.add(w)
                    parent[w], pedge[w] = u, e
                    stack.append(w)
    return parent, pedge


def forests_of(graph: MapGraph, plan: Plan):
    """Every spanning forest with one tree per region of ``plan``."""
    regions = [plan.region(k).tolist() for k in range(plan.r)]
    per_region = [region_trees(graph, r) for r in regions]
    roots = [min(r) for r in regions]
    for combo in itertools.product(*per_region):
        edges = frozenset().union(*combo)
        parent, pedge = rooted_arrays(graph, edges, graph.n_vertices, roots)
        yield ForestPlan(plan, parent, pedge)


def forest_from_key(graph: MapGraph, key) -> ForestPlan:
    """Rebuild a forest plan from ``ForestPlan.key()``, rooting each tree at its smallest vertex."""
    plan = Plan(*key[0])
    roots = [int(plan.region(k).min()) for k in range(plan.r)]
    parent, pedge = rooted_arrays(graph, key[1], graph.n_vertices, roots)
    return ForestPlan(plan, parent, pedge)


def linking_sets(graph: MapGraph, plan: Plan) -> list[tuple[int, ...]]:
    """Every set of r-1 cut edges that joins the regions into one tree."""
    cross = [e for e, (a, b) in enumerate(graph.edges.tolist()) if plan.assignment[a] != plan.assignment[b]]
    out = []
    for combo in itertools.combinations(cross, plan.r - 1):
        pairs = [(int(plan.assignment[graph.edges[e][0]]), int(plan.assignment[graph.edges[e][1]])) for e in combo]
        if is_spanning_tree(plan.r, pairs):
            out.append(combo)
    return out


def is_hierarchical_tree(graph: MapGraph, tree_edges, vertices=None) -> bool:
    """A spanning tree is hierarchical when it restricts to a spanning tree of
    every administrative unit piece it covers."""
    verts = set(range(graph.n_vertices)) if vertices is None else set(vertices)
    unit = graph.admin_unit
    for a in set(int(unit[v]) for v in verts):
        piece = {v for v in verts if unit[v] == a}
        inside = [e for e in tree_edges if unit[graph.edges[e][0]] == a and unit[graph.edges[e][1]] == a]
        if len(inside) != len(piece) - 1:
            return False
    return True


def hierarchical_trees(graph: MapGraph, vertices=None) -> list[frozenset[int]]:
    verts = range(graph.n_vertices) if vertices is None else vertices
    return [t for t in region_trees(graph, verts) if is_hierarchical_tree(graph, t, verts)]


def brute_force_is_hierarchical_plan(graph: MapGraph, plan: Plan, trees=None) -> bool:
    """Some hierarchical spanning tree of the map has every region connected."""
    trees = hierarchical_trees(graph) if trees is None else trees
    for t in trees:
        cut = sum(1 for e in t if plan.assignment[graph.edges[e][0]] != plan.assignment[graph.edges[e][1]])
        if cut == plan.r - 1:
            return True
    return False


def _sides(graph: MapGraph, tree: frozenset[int], e: int, vertices) -> tuple[set[int], set[int]]:
    """The two vertex sets left when edge ``e`` is removed from ``tree``."""
    rest = [tuple(graph.edges[f]) for f in tree if f != e]
    comps = components(graph.n_vertices, vertices, [(int(a), int(b)) for a, b in rest])
    a = int(graph.edges[e][0])
    x = next(c for c in comps if a in c)
    return x, set(vertices) - x


def split_outcome_probs(graph, plan, k, pairs, bounds, space, rule, K=1, forest_edges=frozenset(), links=()):
    """Exact distribution of one forward split of region ``k``, by enumerating
    every spanning tree of the region and every (edge, size assignment) cut.

    ``pairs`` are the allowed unordered size pairs, in schedule order; the
    side below the cut edge (away from the root) takes the first size of an
    oriented pair.  ``rule`` is "top-k",
    "uniform-balanced" or ("softmax", alpha).  Keys match the ``key()`` of
    the kernels' results (the plan's canonical form in the graph space);
    ``None`` is rejection.  ``forest_edges`` are the tree edges of the other
    regions and ``links`` the current linking edges.
    """
    region = sorted(plan.region(k).tolist())
    trees = region_trees(graph, region)
    oriented = []
    for a, b in pairs:
        oriented.append((a, b))
        if a != b:
            oriented.append((b, a))
    pop = graph.pop
    out: dict = {}

    def add(key, p):
        out[key] = out.get(key, 0.0) + p

    root = region[0]  # trees are rooted at the region's smallest vertex
    for tree in trees:
        entries = []
        for e in sorted(tree):
            x, y = _sides(graph, tree, e, region)
            if root in x:
                x, y = y, x
            px, py = float(pop[list(x)].sum()), float(pop[list(y)].sum())
            for j, (sx, sy) in enumerate(oriented):
                bal = bounds.is_balanced(px, sx) and bounds.is_balanced(py, sy)
                dev = max(bounds.deviation(px, sx), bounds.deviation(py, sy))
                entries.append((dev, e, j, bal, x, sx, sy))
        if rule == "top-k":
            ranked = sorted((en for en in entries if en[3]), key=lambda en: en[:3])
            chosen = [(en, 1.0 / K) for en in ranked[:K]]
        elif rule == "uniform-balanced":
            bal = [en for en in entries if en[3]]
            chosen = [(en, 1.0 / len(bal)) for en in bal]
        else:
            alpha = rule[1]
            weights = np.exp([-alpha * en[0] for en in entries])
            weights /= weights.sum()
            chosen = [(en, w) for en, w in zip(entries, weights) if en[3]]
        taken = 0.0
        for (dev, e, j, bal, x, sx, sy), p in chosen:
            assign = plan.assignment.copy()
            assign[list(x)] = plan.r
            sizes = list(plan.sizes)
            sizes[k] = sy
            new = Plan(assign, sizes + [sx]).canonical()
            if space == "graph":
                key = new
            else:
                key = (new, tuple(sorted(forest_edges | (tree - {e}))))
                if space == "linking":
                    key += (tuple(sorted(set(links) | {e})),)
            add(key, p / len(trees))
            taken += p
        add(None, (1.0 - taken) / len(trees))
    return out


def z_scores(counts: Counter, probs: dict, n: int) -> dict:
    """Per-outcome standardized errors of empirical frequencies (binomial SE)."""
    unexpected = set(counts) - set(probs)
    assert not unexpected, f"outcomes with zero exact probability: {sorted(map(str, unexpected))[:3]}"
    out = {}
    for key, p in probs.items():
        se = math.sqrt(p * (1 - p) / n)
        freq = counts.get(key, 0) / n
        out[key] = abs(freq - p) / se if se > 0 else (0.0 if freq == p else math.inf)
    return out
