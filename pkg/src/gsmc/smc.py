"""Sequential Monte Carlo driver: split stages with partial rejection control,
optimal incremental weights, optional merge-split moves between stages."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from . import _core
from ._rng import as_key, child_key, seed_key
from .context import CutRule, PhiRule, WeightContext, default_cut_rule
from .graph import ConfigurationError, DistrictingScheme, ForestPlan, LinkingEdgePlan, MapGraph, Plan
from .target import SplittingSchedule, TargetSpec, check_scheme_bounds

log = logging.getLogger(__name__)

RESAMPLE_MODES = ("every-stage", "defer")

# Purposes of the per-stage random streams.
_P_SPLIT, _P_PARENT, _P_MCMC_PILOT, _P_MCMC, _P_PROBE, _P_PROBE_MCMC, _P_INIT = range(7)

# Above this many vertices the dense determinant for log gamma_1 is skipped.
_MAX_DENSE_LOG_TAU = 3000


class RejectionCapError(RuntimeError):
    """A particle exhausted its proposal attempts without a valid split."""


@dataclass(frozen=True)
class RunConfig:
    """Sampler settings.

    ``K`` fixes the top-K parameter; when ``None`` it is estimated at each
    stage from ``n_probe`` trees (times ``k_multiplier``).  ``resample`` is
    ``"every-stage"`` (parents drawn by weight at every stage) or
    ``"defer"`` (particles keep their own parent and accumulate weights until
    the effective sample size falls below ``ess_threshold * N``).
    """

    n_particles: int = 1000
    seed: int = 0
    schedule: str = "district-only"
    phi: str = "uniform"
    cut_rule: str | None = None
    alpha: float = 0.0
    K: int | None = None
    n_probe: int = 20
    k_multiplier: float = 1.0
    mcmc_successes: int = 0
    resample: str = "every-stage"
    ess_threshold: float = 0.5
    max_attempts: int = 10_000
    threads: int | None = None
    merge_same_component: bool = True

    def __post_init__(self) -> None:
        if self.n_particles < 1:
            raise ConfigurationError("n_particles must be at least 1")
        if self.resample not in RESAMPLE_MODES:
            raise ConfigurationError(f"unknown resample mode {self.resample!r}; expected one of {RESAMPLE_MODES}")
        if self.mcmc_successes < 0:
            raise ConfigurationError("mcmc_successes must be non-negative")
        if self.max_attempts < 1 or self.n_probe < 1:
            raise ConfigurationError("max_attempts and n_probe must be positive")
        if self.K is not None and self.K < 1:
            raise ConfigurationError("K must be at least 1")
        PhiRule(self.phi)

    def rule(self, space: str) -> CutRule:
        if self.cut_rule is None:
            return default_cut_rule(space)
        return CutRule(self.cut_rule, alpha=self.alpha)

    def thread_count(self) -> int:
        if self.threads is not None:
            return max(1, int(self.threads))
        env = os.environ.get("GSMC_THREADS")
        return max(1, int(env)) if env else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("threads")
        return d


@dataclass
class StageRecord:
    """Diagnostics for one split stage (``stage`` is the region count reached)."""

    stage: int
    K: int | None
    attempts: int
    acceptance: float
    parent_redraws: int
    ess: float
    resampled: bool
    log_z_ratio: float
    log_z: float
    mcmc_K: int | None = None
    mcmc_attempts: int = 0
    mcmc_accepted: int = 0


@dataclass
class Ensemble:
    """Weighted particles at stage ``r``.

    Per-particle state is held in arrays: ``assignment`` (N, V), ``sizes``
    (N, D) with the first ``r`` columns used, spanning-tree parents and
    parent edges (forest and linking spaces) and linking edges (N, D - 1).
    ``log_weights`` are the unnormalized log weights behind ``weights``.
    """

    graph: MapGraph
    scheme: DistrictingScheme
    spec: TargetSpec
    config: RunConfig
    r: int
    assignment: np.ndarray
    sizes: np.ndarray
    tree_parent: np.ndarray
    tree_edge: np.ndarray
    links: np.ndarray
    log_weights: np.ndarray
    log_incremental: np.ndarray
    ancestry: list = field(default_factory=list)
    stages: list = field(default_factory=list)
    log_z: float = 0.0
    mcmc_rate: float | None = None

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    @property
    def weights(self) -> np.ndarray:
        lw = self.log_weights
        w = np.exp(lw - lw.max())
        return w / w.sum()

    @property
    def space(self) -> str:
        return self.spec.space

    def plan(self, i: int) -> Plan:
        return Plan(self.assignment[i], self.sizes[i, : self.r])

    def plans(self) -> list[Plan]:
        return [self.plan(i) for i in range(self.n)]

    def particle(self, i: int) -> Plan | ForestPlan | LinkingEdgePlan:
        plan = self.plan(i)
        if self.space == "graph":
            return plan
        forest = ForestPlan(plan, self.tree_parent[i].copy(), self.tree_edge[i].copy())
        if self.space == "forest":
            return forest
        return LinkingEdgePlan(forest, tuple(int(e) for e in self.links[i, : self.r - 1]))

    def weighted_mean(self, fn: Callable[[Plan], float]) -> float:
        vals = np.array([fn(p) for p in self.plans()], dtype=float)
        return float(np.dot(self.weights, vals))

    def context(self, K: int = 1) -> WeightContext:
        cfg = self.config
        return WeightContext(
            self.graph, self.scheme, self.spec, cfg.schedule, PhiRule(cfg.phi), cfg.rule(self.space), K,
            cfg.merge_same_component,
        )

    def compiled(self, K: int = 1):
        return self.context(K).compiled()

    def _base_key(self) -> np.uint64:
        return seed_key(self.config.seed)


def effective_sample_size(weights: Sequence[float]) -> float:
    """``1 / sum(W_i^2)`` for normalized weights."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.dot(w, w))


def resample_parents(weights: Sequence[float], count: int, rng: np.random.Generator) -> np.ndarray:
    """Multinomial draw of ``count`` parent indices with probabilities ``weights``."""
    w = np.asarray(weights, dtype=float)
    if count < 1:
        raise ValueError("count must be at least 1")
    if (w < 0).any() or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("weights must be non-negative and sum to 1")
    return rng.choice(w.size, size=count, p=w / w.sum())


def _ranges(n: int, threads: int) -> list[tuple[int, int]]:
    threads = max(1, min(threads, n))
    step = -(-n // threads)
    return [(lo, min(n, lo + step)) for lo in range(0, n, step)]


def _run_chunks(fn: Callable[[int, int], object], n: int, threads: int) -> list:
    ranges = _ranges(n, threads)
    if len(ranges) == 1:
        return [fn(*ranges[0])]
    with ThreadPoolExecutor(max_workers=len(ranges)) as pool:
        return list(pool.map(lambda lh: fn(*lh), ranges))


def _log_gamma_1(graph: MapGraph, spec: TargetSpec) -> float:
    if graph.n_vertices > _MAX_DENSE_LOG_TAU:
        return math.nan
    G = graph.arrays()
    lab = np.zeros(graph.n_vertices, dtype=np.int64)
    ident = _core.identity_map(1)
    verts = np.arange(graph.n_vertices, dtype=np.int64)
    loc = np.empty(graph.n_vertices, dtype=np.int64)
    lt = _core.log_tau_region(G, spec.hierarchical, lab, ident, 0, verts, verts.size, loc)
    j = _core.score_j(G, lab, ident, 1, spec.j_coefficients()) if spec.has_soft_terms else 0.0
    return float(spec.rho * lt - j)


def _validate(graph: MapGraph, scheme: DistrictingScheme, spec: TargetSpec, config: RunConfig) -> None:
    check_scheme_bounds(graph, scheme, spec.pop_bounds)
    SplittingSchedule(config.schedule, scheme)
    config.rule(spec.space).check_space(spec.space)
    if scheme.D > graph.n_vertices:
        raise ConfigurationError("more districts than vertices")
    if spec.hierarchical and graph.admin_unit is None:
        raise ConfigurationError("hierarchical sampling needs administrative units on the graph")
    if spec.has_soft_terms and graph.admin_unit is None:
        raise ConfigurationError("split-counting soft terms need administrative units on the graph")
    if not spec.pop_bounds.is_balanced(graph.total_pop, scheme.S):
        raise ConfigurationError("the whole map is not balanced for the scheme")


def initial_ensemble(graph: MapGraph, scheme: DistrictingScheme, spec: TargetSpec, config: RunConfig) -> Ensemble:
    """All particles at the single-region plan, with equal weights."""
    _validate(graph, scheme, spec, config)
    N, V, D = config.n_particles, graph.n_vertices, scheme.D
    assign = np.zeros((N, V), dtype=np.int64)
    sizes = np.zeros((N, D), dtype=np.int64)
    sizes[:, 0] = scheme.S
    tpar = np.full((N, V), -1, dtype=np.int64)
    tpe = np.full((N, V), -1, dtype=np.int64)
    links = np.zeros((N, max(D - 1, 1)), dtype=np.int64)
    ens = Ensemble(graph, scheme, spec, config, 1, assign, sizes, tpar, tpe, links, np.zeros(N), np.zeros(N))
    if spec.space != "graph":
        G = graph.arrays()
        key = child_key(ens._base_key(), 0, _P_INIT)
        _run_chunks(
            lambda lo, hi: _core.initial_trees(lo, hi, G, spec.hierarchical, key, assign, tpar, tpe),
            N, config.thread_count(),
        )
    ens.log_z = _log_gamma_1(graph, spec)
    return ens


def split_stage(ens: Ensemble) -> Ensemble:
    """Advance every particle by one split (stage ``r`` to ``r + 1``)."""
    cfg = ens.config
    N, r = ens.n, ens.r
    if r >= ens.scheme.D:
        raise ValueError("ensemble is already complete")
    base = child_key(ens._base_key(), r)
    W = ens.weights
    ess = effective_sample_size(W)
    cumw = np.cumsum(W)
    space = ens.space
    G, ci, cf, jc = ens.compiled()
    K = None
    if space == "graph":
        if cfg.K is not None:
            K = cfg.K
        else:
            best = _core.probe_split_ok(G, ci, cf, r, ens.assignment, ens.sizes, cumw, cfg.n_probe,
                                        child_key(base, _P_PROBE))
            K = max(1, math.ceil(best * cfg.k_multiplier))
        ci[_core.I_K] = K
    defer = cfg.resample == "defer" and r > 1 and ess >= cfg.ess_threshold * N
    prev = np.log(W) if defer else np.zeros(N)

    a_new = np.empty_like(ens.assignment)
    s_new = ens.sizes.copy()
    tp_new = np.full_like(ens.tree_parent, -1)
    te_new = np.full_like(ens.tree_edge, -1)
    l_new = np.zeros_like(ens.links)
    log_inc = np.empty(N)
    parents = np.empty(N, dtype=np.int64)
    attempts = np.zeros(N, dtype=np.int64)
    key_split = child_key(base, _P_SPLIT)
    key_parent = child_key(base, _P_PARENT)
    zeros = np.zeros(N)

    def work(lo: int, hi: int) -> int:
        return _core.split_batch(
            lo, hi, G, ci, cf, jc, r, K or 1, cfg.max_attempts, key_split, key_parent, cumw, defer, zeros,
            ens.assignment, ens.sizes, ens.tree_parent, ens.tree_edge, ens.links,
            a_new, s_new, tp_new, te_new, l_new, log_inc, parents, attempts,
        )

    failed = [i for i in _run_chunks(work, N, cfg.thread_count()) if i >= 0]
    if failed:
        raise RejectionCapError(
            f"stage {r + 1}: particle {failed[0]} made {cfg.max_attempts} proposals without a valid split; "
            "check that the population bounds and scheme admit balanced plans"
        )
    total_attempts = int(attempts.sum())
    if defer:
        # Each slot's first proposal comes from its own parent, so the
        # weighted first-try success rate estimates the mixture acceptance.
        accept = float(np.dot(W, attempts == 1))
        if accept <= 0:
            accept = N / total_attempts
        log_weights = prev + log_inc
        log_ratio = float(logsumexp(log_weights)) + math.log(accept)
    else:
        log_weights = log_inc.copy()
        log_ratio = float(logsumexp(log_inc) - math.log(N)) + math.log(N / total_attempts)
    if not np.isfinite(log_weights).any():
        raise RuntimeError(f"stage {r + 1}: all incremental weights are zero (degenerate ensemble)")
    out = Ensemble(
        ens.graph, ens.scheme, ens.spec, cfg, r + 1, a_new, s_new, tp_new, te_new, l_new,
        log_weights, log_inc, ens.ancestry + [parents], list(ens.stages), ens.log_z + log_ratio, ens.mcmc_rate,
    )
    rec = StageRecord(
        stage=r + 1,
        K=K,
        attempts=total_attempts,
        acceptance=N / total_attempts,
        parent_redraws=total_attempts - N,
        ess=effective_sample_size(out.weights),
        resampled=not defer,
        log_z_ratio=log_ratio,
        log_z=out.log_z,
    )
    out.stages.append(rec)
    log.info(
        "stage %d: K=%s acceptance=%.4f ESS=%.1f log Z=%.4f", rec.stage, K, rec.acceptance, rec.ess, rec.log_z
    )
    return out


def interleave_mcmc(ens: Ensemble, expected_successes: int, rng=None) -> Ensemble:
    """Apply merge-split moves to every particle; weights are left untouched.

    Each particle receives ``ceil(expected_successes / rate)`` attempted moves,
    where ``rate`` is the running acceptance-rate estimate (floored at 0.01).
    Without an estimate from an earlier stage, a pilot of
    ``expected_successes`` moves per particle sets it.
    """
    if expected_successes <= 0 or ens.r < 2:
        return ens
    cfg = ens.config
    N, r = ens.n, ens.r
    base = child_key(ens._base_key(), r) if rng is None else as_key(rng)
    G, ci, cf, jc = ens.compiled()
    K = 1
    if ens.space == "graph":
        if cfg.K is not None:
            K = cfg.K
        else:
            best = _core.probe_merge_ok(G, ci, cf, r, ens.assignment, ens.sizes, np.cumsum(ens.weights),
                                        cfg.n_probe, child_key(base, _P_PROBE_MCMC))
            K = max(1, math.ceil(best * cfg.k_multiplier))
        ci[_core.I_K] = K
    a = ens.assignment.copy()
    s = ens.sizes.copy()
    tp = ens.tree_parent.copy()
    te = ens.tree_edge.copy()
    lk = ens.links.copy()
    accepted = np.zeros(N, dtype=np.int64)
    threads = cfg.thread_count()

    def run(n_steps: int, key) -> None:
        _run_chunks(
            lambda lo, hi: _core.mcmc_batch(lo, hi, G, ci, cf, jc, r, K, n_steps, key, a, s, tp, te, lk, accepted),
            N, threads,
        )

    done = 0
    rate = ens.mcmc_rate
    if rate is None:
        run(expected_successes, child_key(base, _P_MCMC_PILOT))
        done = expected_successes
        rate = accepted.sum() / (N * done)
    total = math.ceil(expected_successes / max(rate, 0.01))
    if total > done:
        run(total - done, child_key(base, _P_MCMC))
        done = total
    out = Ensemble(
        ens.graph, ens.scheme, ens.spec, cfg, r, a, s, tp, te, lk, ens.log_weights, ens.log_incremental,
        ens.ancestry, list(ens.stages), ens.log_z, float(accepted.sum() / (N * done)),
    )
    if out.stages:
        last = out.stages[-1]
        out.stages[-1] = StageRecord(
            **{**asdict(last), "mcmc_K": K if ens.space == "graph" else None,
               "mcmc_attempts": int(N * done), "mcmc_accepted": int(accepted.sum())}
        )
    log.info("stage %d: merge-split acceptance %.4f over %d moves per particle", r, out.mcmc_rate, done)
    return out


def run_gsmc(graph: MapGraph, scheme: DistrictingScheme, spec: TargetSpec, config: RunConfig) -> Ensemble:
    """Sample ``config.n_particles`` weighted plans from the target ``spec``."""
    ens = initial_ensemble(graph, scheme, spec, config)
    for _ in range(1, scheme.D):
        ens = split_stage(ens)
        ens = interleave_mcmc(ens, config.mcmc_successes)
    return ens
