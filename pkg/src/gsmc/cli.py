"""Command-line interface: ``gsmc sample | enumerate | diagnose | stats``.

Exit codes: 0 success, 1 usage or invalid input, 2 failure while running,
3 an R-hat above ``--fail-above-rhat``.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import sys
import time
from typing import Sequence

from .diagnostics import RunSummary, rhat, scalar_statistic, summary_statistics, weighted_se
from .graph import ConfigurationError, GraphError
from .io import (
    build_run,
    build_scheme,
    build_target,
    load_config,
    load_graph,
    parse_scheme,
    read_plans,
    write_enumeration,
    write_plans,
)
from .oracle import EnumerationBudgetError, enumerate_balanced_plans, stream_edges_removed
from .smc import RejectionCapError, run_gsmc
from .target import PopulationBounds

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_RHAT = 0, 1, 2, 3

log = logging.getLogger("gsmc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        raise UsageError(f"{self.prog}: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gsmc", description="Sequential Monte Carlo sampling of redistricting plans.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sample", help="draw a weighted ensemble of plans")
    s.add_argument("--graph", required=True, help="graph JSON file")
    s.add_argument("--config", help="run configuration JSON; flags override its values")
    s.add_argument("--scheme", help="'D' or 'D,S,dmin,dmax' (overrides the config)")
    s.add_argument("--pop-tolerance", type=float, help="relative per-seat population tolerance")
    s.add_argument("--seed", type=int)
    s.add_argument("--n", type=int, help="number of particles")
    s.add_argument("--space", choices=["graph", "forest", "linking"])
    s.add_argument("--schedule", choices=["district-only", "any-valid"])
    s.add_argument("--mcmc-successes", type=int, help="expected accepted merge-split moves per particle per stage")
    s.add_argument("--hierarchical", action="store_true", default=None)
    s.add_argument("--out", required=True, help="output plan archive (JSON lines)")
    s.add_argument("--threads", type=int, help="worker threads (default: GSMC_THREADS or 1)")

    e = sub.add_parser("enumerate", help="list every balanced plan exactly")
    e.add_argument("--graph", required=True)
    e.add_argument("--scheme", required=True, help="'D' or 'D,S,dmin,dmax'")
    e.add_argument("--pop-tolerance", type=float, default=0.0)
    e.add_argument("--out", required=True, help="plan archive, or a JSON histogram with --histogram")
    e.add_argument("--max-plans", type=int, default=20_000_000)
    e.add_argument("--histogram", action="store_true",
                   help="only count plans and the edges-removed distribution (no archive; resumable)")
    e.add_argument("--rho", type=float, default=1.0, help="compactness exponent for --histogram")
    e.add_argument("--checkpoint", help="resume file for --histogram")
    e.add_argument("--threads", type=int, default=1)

    d = sub.add_parser("diagnose", help="R-hat and standard errors across independent runs")
    d.add_argument("--graph", required=True)
    d.add_argument("--runs", required=True, help="glob of plan archives, one per run")
    d.add_argument("--stat", action="append", required=True, help="scalar statistic name (repeatable)")
    d.add_argument("--out", help="CSV table (default: stdout)")
    d.add_argument("--tidy", help="also write one CSV row per (run, plan, statistic)")
    d.add_argument("--fail-above-rhat", type=float)
    d.add_argument("--seed", type=int, default=0, help="seed for the resampling inside R-hat")

    t = sub.add_parser("stats", help="per-plan statistics of a plan archive")
    t.add_argument("--graph", required=True)
    t.add_argument("--plans", required=True)
    t.add_argument("--stat", action="append", required=True)
    t.add_argument("--out", help="CSV table (default: stdout)")
    return p


def _open_out(path: str | None):
    return open(path, "w", newline="") if path else sys.stdout


def _cmd_sample(args) -> int:
    graph = load_graph(args.graph)
    cfg = load_config(args.config)
    if args.scheme:
        scheme = parse_scheme(args.scheme)
    else:
        scheme = build_scheme(cfg["scheme"])
    target = cfg["target"]
    if args.pop_tolerance is not None:
        target.pop("pop_bounds", None)
        target["pop_tolerance"] = args.pop_tolerance
    if args.space is not None:
        target["space"] = args.space
    if args.hierarchical:
        target["hierarchical"] = True
    run = cfg["run"]
    for flag, key in (("seed", "seed"), ("n", "n_particles"), ("schedule", "schedule"),
                      ("mcmc_successes", "mcmc_successes"), ("threads", "threads")):
        if getattr(args, flag) is not None:
            run[key] = getattr(args, flag)
    spec = build_target(graph, scheme, target)
    config = build_run(run)
    t0 = time.perf_counter()
    ens = run_gsmc(graph, scheme, spec, config)
    elapsed = time.perf_counter() - t0
    write_plans(ens, args.out, timing={"total_seconds": elapsed, "threads": config.thread_count()})
    log.info("wrote %d plans to %s (log Z %.6f, %.1f s)", ens.n, args.out, ens.log_z, elapsed)
    return EXIT_OK


def _cmd_enumerate(args) -> int:
    graph = load_graph(args.graph)
    scheme = parse_scheme(args.scheme)
    bounds = PopulationBounds.tolerance(graph, scheme.S, args.pop_tolerance)
    if args.histogram:
        res = stream_edges_removed(graph, scheme, bounds, rho=args.rho, checkpoint=args.checkpoint,
                                   threads=args.threads,
                                   progress=lambda d, n, c: log.info("%d/%d first regions, %d plans", d, n, c))
        with open(args.out, "w") as fh:
            json.dump(res, fh, indent=1)
            fh.write("\n")
        log.info("%d plans", res["count"])
        return EXIT_OK
    plans = enumerate_balanced_plans(graph, scheme, bounds, max_plans=args.max_plans)
    write_enumeration(plans, args.out, extra={"scheme": args.scheme, "pop_tolerance": args.pop_tolerance})
    log.info("wrote %d plans to %s", len(plans), args.out)
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    graph = load_graph(args.graph)
    files = sorted(glob.glob(args.runs))
    if len(files) < 2:
        raise UsageError(f"--runs {args.runs!r} matched {len(files)} file(s); R-hat needs at least two runs")
    loaded = [read_plans(f) for f in files]
    rows = []
    tidy = []
    worst = 1.0
    for name in args.stat:
        runs = [
            RunSummary([scalar_statistic(graph, p, name) for p in plans], w / w.sum(), run_id=f)
            for f, (plans, _, w) in zip(files, loaded)
        ]
        for run in runs:
            tidy.extend((run.run_id, i, repr(float(run.weights[i])), name, repr(float(v)))
                        for i, v in enumerate(run.values))
        r = rhat(runs, seed=args.seed)
        worst = max(worst, r)
        rows.append({"statistic": name, "mean": sum(x.mean for x in runs) / len(runs), "se": weighted_se(runs),
                     "rhat": r, "runs": len(runs)})
    fh = _open_out(args.out)
    try:
        w = csv.DictWriter(fh, fieldnames=["statistic", "mean", "se", "rhat", "runs"])
        w.writeheader()
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    if args.tidy:
        with open(args.tidy, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run", "plan", "weight", "statistic", "value"])
            w.writerows(tidy)
    if args.fail_above_rhat is not None and not (worst <= args.fail_above_rhat):
        log.error("R-hat %.4f exceeds the threshold %.4f", worst, args.fail_above_rhat)
        return EXIT_RHAT
    return EXIT_OK


def _cmd_stats(args) -> int:
    graph = load_graph(args.graph)
    plans, _, weights = read_plans(args.plans)
    rows = []
    for i, p in enumerate(plans):
        vals = summary_statistics(graph, p, args.stat)
        rows.append([i, repr(float(weights[i])),
                     *(json.dumps(list(vals[s])) if isinstance(vals[s], tuple) else vals[s] for s in args.stat)])
    fh = _open_out(args.out)
    try:
        w = csv.writer(fh)
        w.writerow(["plan", "weight", *args.stat])
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


_COMMANDS = {"sample": _cmd_sample, "enumerate": _cmd_enumerate, "diagnose": _cmd_diagnose, "stats": _cmd_stats}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except BrokenPipeError:
        sys.stderr.close()  # output consumer went away (e.g. piped into head)
        return EXIT_OK
    except (UsageError, ConfigurationError, GraphError, KeyError, FileNotFoundError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"gsmc {args.command}: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except (RejectionCapError, EnumerationBudgetError, OSError, RuntimeError, ValueError, MemoryError) as exc:
        print(f"gsmc {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
