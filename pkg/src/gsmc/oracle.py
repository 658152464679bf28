"""Exact enumeration of balanced plans and the exact target distribution over them."""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from . import _core, _enum
from .graph import ConfigurationError, DistrictingScheme, MapGraph, Plan
from .target import PopulationBounds, TargetSpec, check_scheme_bounds, score_j


class EnumerationBudgetError(RuntimeError):
    """The search found more plans than the configured budget."""

    def __init__(self, message: str, partial_count: int) -> None:
        super().__init__(message)
        self.partial_count = partial_count


@dataclass(frozen=True)
class PlanArchive:
    """Plans as rows of an assignment matrix (labels ordered by first vertex)."""

    assignments: np.ndarray
    sizes: np.ndarray

    def __len__(self) -> int:
        return self.assignments.shape[0]

    def plan(self, i: int) -> Plan:
        return Plan(self.assignments[i], self.sizes[i])

    def plans(self) -> list[Plan]:
        return [self.plan(i) for i in range(len(self))]

    @classmethod
    def from_plans(cls, plans: Sequence[Plan]) -> "PlanArchive":
        canon = [p.canonical() for p in plans]
        return cls(np.array([c[0] for c in canon], dtype=np.int64), np.array([c[1] for c in canon], dtype=np.int64))


def _setup(graph: MapGraph, scheme: DistrictingScheme, pop_bounds: PopulationBounds, mode: int, stop_first: int = 0):
    if graph.n_vertices > _enum.MAX_VERTICES:
        raise ConfigurationError(f"exact enumeration supports at most {_enum.MAX_VERTICES} vertices")
    check_scheme_bounds(graph, scheme, pop_bounds)
    V = graph.n_vertices
    nbm = np.zeros(V, dtype=np.int64)
    for a, b in graph.edges:
        nbm[a] |= np.int64(1) << np.int64(b)
        nbm[b] |= np.int64(1) << np.int64(a)
    ip = np.array([scheme.D, scheme.S, scheme.d_min, scheme.d_max, V, mode, stop_first], dtype=np.int64)
    full = np.int64((1 << V) - 1) if V < 63 else np.int64(-1) & np.int64((1 << 63) - 1)
    return ip, nbm, full


def _masks_to_assign(masks: np.ndarray, V: int) -> np.ndarray:
    P, D = masks.shape
    out = np.empty((P, V), dtype=np.int64)
    bits = np.arange(V, dtype=np.int64)
    for start in range(0, P, 20_000):
        chunk = masks[start : start + 20_000]
        member = (chunk[:, :, None] >> bits[None, None, :]) & 1
        out[start : start + 20_000] = np.argmax(member, axis=1)
    return out


def _first_regions(graph: MapGraph, scheme: DistrictingScheme, pop_bounds: PopulationBounds, mode: int):
    """Search context plus every admissible first region (the outermost search choice)."""
    ip1, nbm, full = _setup(graph, scheme, pop_bounds, _enum.MODE_STORE, stop_first=1)
    pop = graph.pop.astype(np.float64)
    eu = np.ascontiguousarray(graph.edges[:, 0])
    ev = np.ascontiguousarray(graph.edges[:, 1])
    D = scheme.D
    cap = 1 << 12
    while True:
        fm = np.zeros((cap, D), np.int64)
        fs = np.zeros((cap, D), np.int64)
        n_first = _enum.search(full, np.zeros(D, np.int64), np.zeros(D, np.int64), 0, ip1, pop, nbm,
                               pop_bounds.lower, pop_bounds.upper, fm, fs, np.zeros(1), np.zeros(1, np.int64),
                               eu, ev, 1.0)
        if n_first <= cap:
            break
        cap = int(n_first)
    ip = ip1.copy()
    ip[_enum.P_MODE] = mode
    ip[_enum.P_STOP_FIRST] = 0
    return ip, nbm, full, pop, eu, ev, fm[:n_first], fs[:n_first]


def enumerate_plan_archive(
    graph: MapGraph,
    scheme: DistrictingScheme,
    pop_bounds: PopulationBounds,
    max_plans: int = 20_000_000,
) -> PlanArchive:
    """All balanced, contiguous plans as an archive, in search order."""
    ip, nbm, full, pop, eu, ev, fm, fs = _first_regions(graph, scheme, pop_bounds, _enum.MODE_STORE)
    D = scheme.D
    lo, hi = pop_bounds.lower, pop_bounds.upper
    masks: list[np.ndarray] = []
    sizes: list[np.ndarray] = []
    found = 0
    cap = 1 << 12
    for t in range(fm.shape[0]):
        while True:
            out_m = np.zeros((cap, D), dtype=np.int64)
            out_s = np.zeros((cap, D), dtype=np.int64)
            count = _enum.search(full & ~fm[t, 0], fm[t], fs[t], 1, ip, pop, nbm, lo, hi, out_m, out_s,
                                 np.zeros(1), np.zeros(1, np.int64), eu, ev, 1.0)
            if count <= cap:
                break
            cap = int(count)  # only this branch is searched again
        found += int(count)
        if found > max_plans:
            raise EnumerationBudgetError(f"found {found} plans, above the budget of {max_plans}", found)
        masks.append(out_m[:count].copy())
        sizes.append(out_s[:count].copy())
    all_m = np.concatenate(masks) if masks else np.zeros((0, D), np.int64)
    all_s = np.concatenate(sizes) if sizes else np.zeros((0, D), np.int64)
    return PlanArchive(_masks_to_assign(all_m, graph.n_vertices), all_s)


def enumerate_balanced_plans(
    graph: MapGraph,
    scheme: DistrictingScheme,
    pop_bounds: PopulationBounds,
    max_plans: int = 20_000_000,
) -> list[Plan]:
    """All distinct balanced, contiguous plans of ``graph`` under ``scheme``.

    Each region is a district whose seat count lies in ``[d_min, d_max]``
    and whose population lies within the per-seat bounds.  The order is
    deterministic.
    """
    return enumerate_plan_archive(graph, scheme, pop_bounds, max_plans).plans()


@dataclass(frozen=True)
class ExactDistribution:
    """Plans with their unnormalized log target values and probabilities."""

    archive: PlanArchive
    log_gamma: np.ndarray
    log_z: float

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_gamma - self.log_z)

    def __len__(self) -> int:
        return len(self.archive)

    def index(self) -> dict[tuple, int]:
        """Map from canonical plan form to row."""
        return {
            (tuple(int(x) for x in self.archive.assignments[i]), tuple(int(x) for x in self.archive.sizes[i])): i
            for i in range(len(self))
        }

    def histogram(self, statistic: Callable[[Plan], float]) -> dict[float, float]:
        """Exact distribution of a scalar plan statistic."""
        out: dict[float, float] = {}
        probs = self.probabilities
        for i in range(len(self)):
            key = statistic(self.archive.plan(i))
            out[key] = out.get(key, 0.0) + float(probs[i])
        return dict(sorted(out.items()))

    def edges_removed_histogram(self, graph: MapGraph) -> dict[int, float]:
        a = self.archive.assignments
        cut = (a[:, graph.edges[:, 0]] != a[:, graph.edges[:, 1]]).sum(axis=1)
        probs = self.probabilities
        out: dict[int, float] = {}
        for c in np.unique(cut):
            out[int(c)] = float(probs[cut == c].sum())
        return out


def exact_distribution(graph: MapGraph, plans: Sequence[Plan] | PlanArchive, spec: TargetSpec) -> ExactDistribution:
    """Normalized target probabilities of the given (complete, balanced) plans."""
    archive = plans if isinstance(plans, PlanArchive) else PlanArchive.from_plans(plans)
    if len(archive) == 0:
        raise ValueError("no plans to normalize")
    D = archive.sizes.shape[1]
    if spec.hierarchical:
        G = graph.arrays()
        ident = _core.identity_map(D)
        lg = np.empty(len(archive))
        for i in range(len(archive)):
            a = archive.assignments[i]
            if not _core.hier_check(G, a, ident, D, -1):
                lg[i] = -math.inf
            else:
                lg[i] = spec.rho * float(_core.region_log_taus(G, True, a, D).sum())
    elif spec.rho == 0.0:
        lg = np.zeros(len(archive))
    else:
        lg = _enum.batch_log_tau_sum(graph.indptr, graph.nbr, archive.assignments, D, float(spec.rho))
    if spec.has_soft_terms:
        lg = lg - np.array([score_j(graph, archive.plan(i), spec) for i in range(len(archive))])
    return ExactDistribution(archive, lg, float(logsumexp(lg)))


def stream_edges_removed(
    graph: MapGraph,
    scheme: DistrictingScheme,
    pop_bounds: PopulationBounds,
    rho: float = 1.0,
    checkpoint: str | os.PathLike | None = None,
    threads: int = 1,
    progress: Callable[[int, int, int], None] | None = None,
) -> dict:
    """Plan count and exact edges-removed distribution without storing plans.

    The search is split by the choice of the first region; finished pieces
    are saved to ``checkpoint`` (JSON) so an interrupted run resumes.
    Returns ``{"count", "probabilities", "counts"}``.
    """
    ip, nbm, full, pop, eu, ev, fm, fs = _first_regions(graph, scheme, pop_bounds, _enum.MODE_HISTOGRAM)
    n_first = fm.shape[0]
    D, E = scheme.D, graph.n_edges
    lo, hi = pop_bounds.lower, pop_bounds.upper
    fingerprint = hashlib.sha256(json.dumps(
        [graph.edges.tolist(), graph.pop.tolist(), [D, scheme.S, scheme.d_min, scheme.d_max], [lo, hi], rho]
    ).encode()).hexdigest()
    state = {"fingerprint": fingerprint, "done": [], "hist": [0.0] * (E + 1), "counts": [0] * (E + 1)}
    if checkpoint is not None and os.path.exists(checkpoint):
        with open(checkpoint) as fh:
            state = json.load(fh)
        if state.get("fingerprint") != fingerprint:
            raise ConfigurationError(f"checkpoint {checkpoint} belongs to a different map, scheme, bounds or rho")
    done = set(state["done"])

    def task(t: int):
        hist = np.zeros(E + 1)
        hist_n = np.zeros(E + 1, np.int64)
        U = full & ~fm[t, 0]
        _enum.search(U, fm[t], fs[t], 1, ip, pop, nbm, lo, hi, np.zeros((1, D), np.int64), np.zeros((1, D), np.int64),
                     hist, hist_n, eu, ev, rho)
        return t, hist, hist_n

    todo = [t for t in range(n_first) if t not in done]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for t, hist, hist_n in pool.map(task, todo):
            state["hist"] = [a + b for a, b in zip(state["hist"], hist.tolist())]
            state["counts"] = [a + int(b) for a, b in zip(state["counts"], hist_n.tolist())]
            state["done"].append(t)
            if checkpoint is not None:
                tmp = f"{checkpoint}.tmp"
                with open(tmp, "w") as fh:
                    json.dump(state, fh)
                os.replace(tmp, checkpoint)
            if progress is not None:
                progress(len(state["done"]), n_first, sum(state["counts"]))
    total = sum(state["hist"])
    return {
        "count": int(sum(state["counts"])),
        "probabilities": {c: h / total for c, h in enumerate(state["hist"]) if state["counts"][c] > 0},
        "counts": {c: n for c, n in enumerate(state["counts"]) if n > 0},
    }
