"""Acceptance checks.  Each test prints one PASS/FAIL line with its pinned
tolerance, visible under ``pytest -v``.  Every random stream uses seed 0 or a
fixed offset from it."""

import itertools
import math
import os
from collections import Counter

import numpy as np
import pytest

from gsmc.cli import main
from gsmc.context import CutRule
from gsmc.diagnostics import RunSummary, lineage_standard_error, rhat
from gsmc.graph import DistrictingScheme, ForestPlan, LinkingEdgePlan, MapGraph, Plan, admin_splits
from gsmc.hierarchy import hierarchical_wilson, is_hierarchical_plan
from gsmc.io import manifest_path, read_plans, save_graph
from gsmc.kernels import split_forest_space, split_graph_space, split_linking_space
from gsmc.oracle import enumerate_balanced_plans, enumerate_plan_archive, exact_distribution, stream_edges_removed
from gsmc.smc import RunConfig, initial_ensemble, interleave_mcmc, run_gsmc, split_stage
from gsmc.target import PopulationBounds, SplittingSchedule, TargetSpec, schedule_pairs
from gsmc.trees import log_spanning_tree_count, wilson_tree

from helpers import (
    bin_z,
    brute_force_is_hierarchical_plan,
    chi_square_p,
    compare_to_exact,
    hierarchical_trees,
    rooted_arrays,
    region_trees,
    spanning_trees,
    split_outcome_probs,
    z_scores,
)
from test_mcmc import STEP, ctx_for, exact_target, key_of, start


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def edges_cut(ens):
    g = ens.graph
    return (ens.assignment[:, g.edges[:, 0]] != ens.assignment[:, g.edges[:, 1]]).sum(axis=1)


def test_1_small_maps_match_enumeration(capsys):
    Z_MAX, TV_MAX = 3.0, 0.02
    maps = [((2, 2), 2), ((1, 6), 3), ((3, 3), 3)]
    worst_z = worst_tv = 0.0
    failures = []
    configs = 0
    for (rows, cols), D in maps:
        g = MapGraph.grid(rows, cols)
        scheme = DistrictingScheme.single_member(D)
        bounds = PopulationBounds.exact(g, D)
        schedules = ["district-only", "any-valid"] if D >= 3 else ["district-only"]
        for space, schedule, mcmc in itertools.product(["graph", "forest", "linking"], schedules, [0, 5]):
            spec = TargetSpec(bounds, space=space)
            exact = exact_distribution(g, enumerate_plan_archive(g, scheme, bounds), spec)
            ens = run_gsmc(g, scheme, spec, RunConfig(n_particles=50_000, seed=0, schedule=schedule,
                                                      mcmc_successes=mcmc))
            z, tv = compare_to_exact(ens, exact)
            configs += 1
            worst_z, worst_tv = max(worst_z, z), max(worst_tv, tv)
            if z > Z_MAX or tv > TV_MAX:
                failures.append(f"{rows}x{cols} {space} {schedule} mcmc={mcmc}: z={z:.2f} tv={tv:.4f}")
    report(capsys, 1, not failures,
           f"{configs} configurations at N=50,000; worst plan z {worst_z:.2f} (max {Z_MAX}), "
           f"worst edges-removed TV {worst_tv:.4f} (max {TV_MAX})" + (f"; failing: {failures}" if failures else ""))


def test_2_multi_member_count_and_histogram(capsys):
    Z_MAX = 3.0
    g = MapGraph.grid(5, 7)
    scheme = DistrictingScheme(3, 7, 2, 3)
    bounds = PopulationBounds.exact(g, 7)
    spec = TargetSpec(bounds)
    plans = enumerate_balanced_plans(g, scheme, bounds)
    count = len(plans)
    hist = exact_distribution(g, plans, spec).edges_removed_histogram(g)
    ens = run_gsmc(g, scheme, spec, RunConfig(n_particles=10_000, seed=0, schedule="district-only"))
    w = ens.weights
    ess = 1.0 / np.sum(w**2)
    cut = edges_cut(ens)
    stray = set(cut.tolist()) - set(hist)
    zs = {}
    for c, p in hist.items():
        f = (cut == c).astype(float)
        se = lineage_standard_error(f, w, ens.ancestry) if f.any() else 0.0
        zs[c] = bin_z(float(w @ f), p, se, ess)
    worst = max(zs.values())
    ok = count == 420_993 and worst <= Z_MAX and not stray
    report(capsys, 2, ok, f"5x7 count {count:,} (expected 420,993); SMC N=10,000 worst bin z {worst:.2f} "
                          f"over {len(zs)} bins (max {Z_MAX})" + (f"; bins outside the support {stray}" if stray else ""))


def test_3_seven_by_seven_headline(capsys):
    TRUTH, TOL, RHAT_MAX = 0.207, 0.01, 1.05
    g = MapGraph.grid(7, 7)
    scheme = DistrictingScheme.single_member(7)
    spec = TargetSpec(PopulationBounds.exact(g, 7))
    runs = []
    for seed in range(30):
        ens = run_gsmc(g, scheme, spec, RunConfig(n_particles=10_000, seed=seed, schedule="any-valid"))
        runs.append(RunSummary((edges_cut(ens) == 32).astype(float), ens.weights, run_id=str(seed)))
    mean = float(np.mean([r.mean for r in runs]))
    r = rhat(runs, seed=0)
    ok = abs(mean - TRUTH) <= TOL and r < RHAT_MAX
    report(capsys, 3, ok, f"30 runs at N=10,000: mean P(32 edges removed) {mean:.4f} (target {TRUTH} +/- {TOL}), "
                          f"R-hat {r:.4f} (max {RHAT_MAX})")


def random_multigraph(rng, simple):
    n = int(rng.integers(2, 9))
    edges = [(i, int(rng.integers(0, i))) for i in range(1, n)]
    for _ in range(int(rng.integers(0, 8))):
        a, b = (int(x) for x in rng.integers(0, n, size=2))
        if a != b:
            edges.append((a, b))
    if simple:
        edges = sorted({(min(a, b), max(a, b)) for a, b in edges})
    return n, edges


def test_4_matrix_tree_matches_enumeration(capsys):
    REL = 1e-9
    rng = np.random.default_rng(0)
    worst = 0.0
    for i in range(200):
        simple = i % 2 == 0
        n, edges = random_multigraph(rng, simple)
        if simple:
            got = log_spanning_tree_count(MapGraph([str(v) for v in range(n)], [1] * n, edges))
        else:
            m = np.zeros((n, n), dtype=np.int64)
            for a, b in edges:
                m[a, b] += 1
                m[b, a] += 1
            got = log_spanning_tree_count(m)
        want = len(spanning_trees(n, edges))
        worst = max(worst, abs(math.exp(got) - want) / want)
    report(capsys, 4, worst < REL, f"200 random graphs and multigraphs on <= 8 nodes: worst relative error "
                                   f"{worst:.2e} (max {REL:.0e})")


def test_5_wilson_uniformity(capsys):
    ALPHA, DRAWS = 1e-3, 100_000
    rng = np.random.default_rng(0)
    results = {}
    c4 = MapGraph([str(i) for i in range(4)], [1] * 4, [(i, (i + 1) % 4) for i in range(4)])
    for name, g in (("C4", c4), ("2x3", MapGraph.grid(2, 3))):
        trees = region_trees(g, range(g.n_vertices))
        counts = Counter(wilson_tree(g, rng).edges() for _ in range(DRAWS))
        results[name] = chi_square_p(counts, {t: 1 / len(trees) for t in trees})
    rows = MapGraph.grid(2, 2, admin_unit=[0, 0, 1, 1])
    trees = hierarchical_trees(rows)
    counts = Counter(hierarchical_wilson(rows, rng).edges() for _ in range(DRAWS))
    results["hierarchical 2x2 rows"] = chi_square_p(counts, {t: 1 / len(trees) for t in trees})
    ok = all(p > ALPHA for p in results.values())
    report(capsys, 5, ok, f"chi-square p-values at {DRAWS:,} draws (need > {ALPHA}): "
                          + ", ".join(f"{k} {p:.3f}" for k, p in results.items()))


def test_6_split_kernels_match_closed_forms(capsys):
    Z_MAX, DRAWS = 3.0, 200_000
    g = MapGraph.grid(2, 3)
    scheme = DistrictingScheme.single_member(3)
    bounds = PopulationBounds.tolerance(g, 3, 0.55)
    sched = SplittingSchedule("district-only", scheme)
    root = Plan([0] * 6, [3])
    pairs = schedule_pairs(sched, 1, 3, [3])
    trees = region_trees(g, range(6))
    parent, pedge = rooted_arrays(g, trees[0], 6, [0])
    forest = ForestPlan(root, parent, pedge)
    rule = CutRule.softmax(1.0)
    draws = {
        "graph": (lambda rng: split_graph_space(g, root, 0, 2, sched, bounds, rng),
                  split_outcome_probs(g, root, 0, pairs, bounds, "graph", "top-k", K=2)),
        "forest": (lambda rng: split_forest_space(g, forest, 0, CutRule.uniform_balanced(), sched, bounds, rng),
                   split_outcome_probs(g, root, 0, pairs, bounds, "forest", "uniform-balanced")),
        "linking": (lambda rng: split_linking_space(g, LinkingEdgePlan(forest, ()), 0, rule, sched, bounds, rng),
                    split_outcome_probs(g, root, 0, pairs, bounds, "linking", ("softmax", 1.0))),
    }
    worst = {}
    for i, (space, (draw, probs)) in enumerate(draws.items()):
        rng = np.random.default_rng(i)
        counts = Counter(None if x is None else (x.canonical() if isinstance(x, Plan) else x.key())
                         for x in (draw(rng) for _ in range(DRAWS)))
        z = z_scores(counts, probs, DRAWS)
        worst[space] = (max(z.values()), len(z))
    ok = all(z <= Z_MAX for z, _ in worst.values())
    report(capsys, 6, ok, f"{DRAWS:,} splits of the 2x3 grid per space, worst outcome z (max {Z_MAX}): "
                          + ", ".join(f"{s} {z:.2f} over {n} outcomes" for s, (z, n) in worst.items()))


CHAINS = [
    ((2, 2), 2, None, 1, "graph", None),
    ((2, 2), 2, None, 1, "forest", CutRule.uniform_balanced()),
    ((2, 2), 2, None, 1, "linking", CutRule.uniform_balanced()),
    ((1, 5), 3, 0.4, 2, "graph", None),
    ((1, 5), 3, 0.4, 1, "forest", CutRule.softmax(2.0)),
    ((1, 5), 3, 0.4, 1, "linking", CutRule.uniform_balanced()),
]


def test_7_merge_split_invariance(capsys):
    ALPHA, STEPS, THIN = 1e-3, 200_000, 10
    pvals = {}
    for i, ((rows, cols), D, tol, K, space, rule) in enumerate(CHAINS):
        g = MapGraph.grid(rows, cols)
        ctx = ctx_for(g, D, space=space, tol=tol, K=K, rule=rule)
        rng = np.random.default_rng(i)
        x = start(g, ctx)
        step = STEP[space]
        counts = Counter()
        for t in range(STEPS):
            x, _ = step(x, ctx, rng)
            if t % THIN == THIN - 1:
                counts[key_of(x)] += 1
        pvals[f"{rows}x{cols} {space}"] = chi_square_p(counts, exact_target(g, ctx))
    bitwise = True
    for space in ("graph", "forest", "linking"):
        g = MapGraph.grid(4, 4)
        spec = TargetSpec(PopulationBounds.exact(g, 4), space=space)
        ens = split_stage(split_stage(initial_ensemble(g, DistrictingScheme.single_member(4), spec,
                                                       RunConfig(n_particles=500, seed=0))))
        moved = interleave_mcmc(ens, 3)
        bitwise &= moved.log_weights.tobytes() == ens.log_weights.tobytes()
        bitwise &= moved.weights.tobytes() == ens.weights.tobytes()
    ok = bitwise and all(p > ALPHA for p in pvals.values())
    report(capsys, 7, ok, f"{STEPS:,}-step chains, every {THIN}th state, chi-square p (need > {ALPHA}): "
                          + ", ".join(f"{k} {p:.3f}" for k, p in pvals.items())
                          + f"; weights bitwise unchanged by MCMC: {bitwise}")


def test_8_hierarchical_guarantees(capsys):
    g = MapGraph.grid(4, 4, admin_unit=[0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7])
    D = 4
    spec = TargetSpec(PopulationBounds.tolerance(g, D, 0.25), hierarchical=True)
    ens = run_gsmc(g, DistrictingScheme.single_member(D), spec, RunConfig(n_particles=100_000, seed=0))
    violations = sum(not is_hierarchical_plan(g, p) or admin_splits(g, p) > D - 1 for p in ens.plans())
    maps = [(2, 3, [0, 0, 1, 0, 2, 1]), (2, 4, [0, 0, 1, 1, 2, 2, 1, 1]), (1, 6, [0, 0, 1, 1, 2, 2]),
            (2, 4, [0, 0, 0, 1, 2, 2, 1, 1]), (2, 4, [0, 1, 1, 2, 0, 0, 1, 2])]
    checked = mismatches = 0
    for rows, cols, units in maps:
        m = MapGraph.grid(rows, cols, admin_unit=units)
        trees = hierarchical_trees(m)
        n = m.n_vertices
        for k in range(2, n + 1):
            wide = PopulationBounds(0.0, float(n), n / k)
            for plan in enumerate_balanced_plans(m, DistrictingScheme.single_member(k), wide):
                checked += 1
                mismatches += is_hierarchical_plan(m, plan) != brute_force_is_hierarchical_plan(m, plan, trees)
    ok = violations == 0 and mismatches == 0
    report(capsys, 8, ok, f"{ens.n:,} hierarchical plans with {violations} violations; is_hierarchical_plan "
                          f"disagrees with brute force on {mismatches} of {checked} plans")


def test_9_cli_determinism(tmp_path, capsys):
    graph = tmp_path / "g.json"
    save_graph(MapGraph.grid(4, 4), graph)
    ok = True
    notes = []
    for space in ("graph", "linking"):
        def sample(tag, threads):
            out = tmp_path / f"{space}-{tag}.jsonl"
            code = main(["sample", "--graph", str(graph), "--scheme", "4", "--n", "1000", "--seed", "7",
                         "--space", space, "--mcmc-successes", "2", "--threads", str(threads), "--out", str(out)])
            assert code == 0
            return out
        a, b, c = sample("a", 1), sample("b", 1), sample("c", 3)
        same_bytes = a.read_bytes() == b.read_bytes() and \
            open(manifest_path(a), "rb").read() == open(manifest_path(b), "rb").read()
        pa, _, wa = read_plans(a)
        pc, _, wc = read_plans(c)
        ka = sorted(zip((p.canonical() for p in pa), wa.tolist()))
        kc = sorted(zip((p.canonical() for p in pc), wc.tolist()))
        same_multiset = [k for k, _ in ka] == [k for k, _ in kc]
        max_dw = max(abs(x - y) for (_, x), (_, y) in zip(ka, kc)) if same_multiset else math.inf
        ok &= same_bytes and same_multiset and max_dw <= 1e-12
        notes.append(f"{space}: threads 1 byte-identical {same_bytes}, threads 3 same plans {same_multiset} "
                     f"with max weight difference {max_dw:.1e}")
    report(capsys, 9, ok, "; ".join(notes) + " (max 1e-12)")


FULL_7X7 = 158_753_814


def test_10_declared_out_of_scope(tmp_path, capsys):
    declared = ("real-map analyses and their large R-hat sweep are not reproduced; "
                "criteria 1 to 9 stand in for them")
    if not os.environ.get("GSMC_FULL_7X7"):
        report(capsys, 10, True, declared + "; full 7x7 enumeration not run (set GSMC_FULL_7X7=1 to run it)")
        return
    g = MapGraph.grid(7, 7)
    res = stream_edges_removed(g, DistrictingScheme.single_member(7), PopulationBounds.exact(g, 7),
                               checkpoint=os.environ.get("GSMC_7X7_CHECKPOINT", str(tmp_path / "7x7.json")))
    p32 = res["probabilities"].get(32, 0.0)
    ok = res["count"] == FULL_7X7 and abs(p32 - 0.207) < 5e-4
    report(capsys, 10, ok, declared + f"; full 7x7 enumeration found {res['count']:,} plans "
                                      f"(expected {FULL_7X7:,}), P(32) = {p32:.4f} (expected 0.207)")
