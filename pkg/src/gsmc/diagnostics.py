"""Convergence diagnostics across independent runs and per-plan summary statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .graph import MapGraph, Plan, admin_splits, edges_removed, units_split


@dataclass(frozen=True)
class RunSummary:
    """One run's per-particle statistic values and normalized weights."""

    values: np.ndarray
    weights: np.ndarray
    run_id: str = ""
    config_digest: str = ""

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if v.shape != w.shape or v.ndim != 1 or v.size == 0:
            raise ValueError("values and weights must be equal-length non-empty vectors")
        if not np.isfinite(v).all():
            raise ValueError("statistic values must be finite")
        if (w < 0).any() or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("weights must be non-negative and sum to 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.values))

    def resample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """Equal-weight draws by multinomial resampling."""
        return self.values[rng.choice(self.n, size=size, p=self.weights / self.weights.sum())]


def _split_rhat(chains: np.ndarray) -> float:
    """Classic split-R-hat of an (n_chains, n_draws) array."""
    half = chains.shape[1] // 2
    if half < 1:
        return 1.0
    split = np.concatenate([chains[:, :half], chains[:, half : 2 * half]], axis=0)
    n = split.shape[1]
    means = split.mean(axis=1)
    within = split.var(axis=1, ddof=1).mean() if n > 1 else 0.0
    between = n * means.var(ddof=1)
    if within <= 0:
        return 1.0 if between <= 0 else math.inf
    var_plus = (n - 1) / n * within + between / n
    return float(math.sqrt(var_plus / within))


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    ranks = rankdata(x, method="average").reshape(x.shape)
    return ndtri((ranks - 0.375) / (x.size + 0.25))


def rhat(runs: Sequence[RunSummary], draws: int | None = None, seed: int = 0) -> float:
    """Rank-normalized split-R-hat across independent runs.

    Each run is first resampled to ``draws`` equal-weight draws (default:
    its particle count, capped at 10,000) using a seeded generator.  The
    result is the larger of the bulk and folded values.  Constant statistics
    give 1.
    """
    if len(runs) < 2:
        raise ValueError("R-hat needs at least two runs")
    rng = np.random.default_rng(seed)
    m = draws or min(min(r.n for r in runs), 10_000)
    chains = np.stack([r.resample(m, rng) for r in runs])
    if np.ptp(chains) == 0:
        return 1.0
    bulk = _split_rhat(_rank_normalize(chains))
    folded = np.abs(chains - np.median(chains))
    tail = 1.0 if np.ptp(folded) == 0 else _split_rhat(_rank_normalize(folded))
    return max(bulk, tail)


def weighted_se(runs: Sequence[RunSummary]) -> float:
    """Standard error of the across-run mean of weighted estimates."""
    if len(runs) < 2:
        raise ValueError("need at least two runs")
    means = np.array([r.mean for r in runs])
    return float(means.std(ddof=1) / math.sqrt(means.size))


def lineage_standard_error(values, weights, ancestry: Sequence[np.ndarray]) -> float:
    """Standard error of the weighted mean of ``values`` over one SMC ensemble.

    Resampling makes particles that share an ancestor correlated, so the
    variance is summed over groups of particles descending from the same
    particle of the first split stage (whose particles are drawn
    independently).  ``ancestry[k]`` holds the parent indices used to build
    stage ``k + 2`` from stage ``k + 1``.
    """
    f = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    live = f[w > 0]
    if live.size == 0 or np.all(live == live[0]):
        return 0.0  # the estimate is exact; rounding in mu would otherwise leave a spurious SE
    idx = np.arange(f.size)
    for parents in reversed(list(ancestry)[1:]):
        idx = np.asarray(parents)[idx]
    mu = float(np.dot(w, f))
    group = np.bincount(idx, weights=w * (f - mu), minlength=f.size)
    return float(math.sqrt(np.sum(group**2)))


def _region_sums(graph: MapGraph, plan: Plan, attr: str) -> np.ndarray:
    if attr not in graph.attributes:
        raise KeyError(f"graph has no vertex attribute {attr!r}")
    return np.bincount(plan.assignment, weights=np.asarray(graph.attributes[attr], float), minlength=plan.r)


def _shares(graph: MapGraph, plan: Plan, spec: str) -> np.ndarray:
    num, _, den = spec.partition("/")
    if not den:
        raise ValueError(f"share statistics are named 'share:<attr>/<other>', got 'share:{spec}'")
    a = _region_sums(graph, plan, num)
    b = _region_sums(graph, plan, den)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(a + b > 0, a / (a + b), 0.0)


STATISTICS = (
    "edges_removed",
    "edges_removed_fraction",
    "admin_splits",
    "total_splits",
    "sum:<attr>",
    "share:<attr>/<other>",
    "seats_above:<attr>/<other>[@threshold]",
)


def summary_statistics(graph: MapGraph, plan: Plan, requested: Iterable[str]) -> dict[str, object]:
    """Per-plan statistics by name.

    Scalars: ``edges_removed`` (count), ``edges_removed_fraction``,
    ``admin_splits``, ``total_splits`` (units touched by two or more regions).
    Vectors: ``sum:<attr>`` gives per-region sums in region order and
    ``share:<a>/<b>`` the sorted per-region share ``a / (a + b)``.
    ``seats_above:<a>/<b>@t`` counts regions whose share exceeds ``t``
    (default 0.5).
    """
    out: dict[str, object] = {}
    for name in requested:
        if name == "edges_removed":
            out[name] = edges_removed(graph, plan)[1]
        elif name == "edges_removed_fraction":
            out[name] = edges_removed(graph, plan)[0]
        elif name == "admin_splits":
            out[name] = admin_splits(graph, plan)
        elif name == "total_splits":
            out[name] = units_split(graph, plan)
        elif name.startswith("sum:"):
            out[name] = tuple(float(x) for x in _region_sums(graph, plan, name[4:]))
        elif name.startswith("share:"):
            out[name] = tuple(float(x) for x in np.sort(_shares(graph, plan, name[6:])))
        elif name.startswith("seats_above:"):
            body, _, thr = name[12:].partition("@")
            t = float(thr) if thr else 0.5
            out[name] = int((_shares(graph, plan, body) > t).sum())
        else:
            raise KeyError(f"unknown statistic {name!r}; known: {', '.join(STATISTICS)}")
    return out


def scalar_statistic(graph: MapGraph, plan: Plan, name: str) -> float:
    """A statistic that must evaluate to a single number."""
    value = summary_statistics(graph, plan, [name])[name]
    if isinstance(value, tuple):
        raise ValueError(f"statistic {name!r} is a vector")
    return float(value)


def summarize_runs(runs: Mapping[str, Sequence[RunSummary]], seed: int = 0) -> list[dict[str, float | str]]:
    """One row per statistic: across-run mean, standard error and R-hat."""
    rows = []
    for name, group in runs.items():
        rows.append(
            {
                "statistic": name,
                "mean": float(np.mean([r.mean for r in group])),
                "se": weighted_se(group) if len(group) > 1 else math.nan,
                "rhat": rhat(group, seed=seed) if len(group) > 1 else math.nan,
                "runs": len(group),
            }
        )
    return rows
