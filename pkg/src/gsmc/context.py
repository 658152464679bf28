"""Rules and the context object shared by kernels, weights and merge-split moves."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _core
from .graph import ConfigurationError, DistrictingScheme, MapGraph
from .target import (
    PopulationBounds,
    SplittingSchedule,
    TargetSpec,
    bounds_config,
    check_scheme_bounds,
    scheme_config,
)

PHI_MODES = ("uniform", "proportional")
CUT_KINDS = ("top-k", "uniform-balanced", "softmax")


@dataclass(frozen=True)
class PhiRule:
    """How the next multidistrict to split is chosen."""

    mode: str = "uniform"

    def __post_init__(self) -> None:
        if self.mode not in PHI_MODES:
            raise ConfigurationError(f"unknown selection mode {self.mode!r}; expected one of {PHI_MODES}")


@dataclass(frozen=True)
class CutRule:
    """How a tree cut is chosen.

    ``top-k`` (graph space) picks uniformly among the ``K`` lowest-deviation
    cuts.  ``uniform-balanced`` and ``softmax`` (forest and linking spaces)
    define an explicit cut distribution ``p_cut``.
    """

    kind: str = "uniform-balanced"
    K: int | None = None
    alpha: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in CUT_KINDS:
            raise ConfigurationError(f"unknown cut rule {self.kind!r}; expected one of {CUT_KINDS}")
        if self.K is not None and self.K < 1:
            raise ConfigurationError("K must be at least 1")

    @classmethod
    def top_k(cls, K: int | None = None) -> "CutRule":
        return cls("top-k", K=K)

    @classmethod
    def uniform_balanced(cls) -> "CutRule":
        return cls("uniform-balanced")

    @classmethod
    def softmax(cls, alpha: float) -> "CutRule":
        return cls("softmax", alpha=float(alpha))

    def check_space(self, space: str) -> None:
        if self.kind == "top-k" and space != "graph":
            raise ConfigurationError("top-K cuts are only valid in the graph space")
        if self.kind != "top-k" and space == "graph":
            raise ConfigurationError("the graph space needs the top-K cut rule")


def default_cut_rule(space: str) -> CutRule:
    return CutRule.top_k() if space == "graph" else CutRule.uniform_balanced()


@dataclass(frozen=True)
class WeightContext:
    """Everything needed to evaluate kernels, weights and merge-split ratios.

    ``K`` is the top-K parameter for graph-space work.  ``merge_same_component``
    controls hierarchical merge-split eligibility: when set, any pair whose
    union meets each unit in one piece may be proposed, and non-hierarchical
    results are rejected; otherwise only pairs whose merged plan is
    hierarchical are eligible.
    """

    graph: MapGraph
    scheme: DistrictingScheme
    spec: TargetSpec
    schedule_kind: str = "district-only"
    phi: PhiRule = field(default_factory=PhiRule)
    cut_rule: CutRule | None = None
    K: int = 1
    merge_same_component: bool = True

    def __post_init__(self) -> None:
        SplittingSchedule(self.schedule_kind, self.scheme)
        check_scheme_bounds(self.graph, self.scheme, self.spec.pop_bounds)
        self.rule.check_space(self.spec.space)
        if self.spec.hierarchical and self.graph.admin_unit is None:
            raise ConfigurationError("hierarchical sampling needs administrative units on the graph")
        if self.spec.has_soft_terms and self.graph.admin_unit is None:
            raise ConfigurationError("split-counting soft terms need administrative units on the graph")
        if self.K < 1:
            raise ConfigurationError("K must be at least 1")

    @property
    def rule(self) -> CutRule:
        return self.cut_rule if self.cut_rule is not None else default_cut_rule(self.spec.space)

    @property
    def schedule(self) -> SplittingSchedule:
        return SplittingSchedule(self.schedule_kind, self.scheme)

    @property
    def bounds(self) -> PopulationBounds:
        return self.spec.pop_bounds

    def with_K(self, K: int) -> "WeightContext":
        return WeightContext(
            self.graph, self.scheme, self.spec, self.schedule_kind, self.phi, self.cut_rule, int(K),
            self.merge_same_component,
        )

    def compiled(self) -> tuple[tuple, np.ndarray, np.ndarray, np.ndarray]:
        """``(G, ci, cf, jc)`` for the compiled kernels."""
        return (self.graph.arrays(),) + compile_config(
            self.scheme,
            self.spec,
            self.schedule_kind,
            self.phi,
            self.rule,
            self.K,
            self.merge_same_component,
        )


def compile_config(
    scheme: DistrictingScheme,
    spec: TargetSpec,
    schedule_kind: str,
    phi: PhiRule,
    rule: CutRule,
    K: int,
    merge_same_component: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ci = scheme_config(scheme, schedule_kind)
    ci[_core.I_PHI] = PHI_MODES.index(phi.mode)
    ci[_core.I_SPACE] = ("graph", "forest", "linking").index(spec.space)
    ci[_core.I_CUT] = CUT_KINDS.index(rule.kind)
    ci[_core.I_K] = K
    ci[_core.I_HIER] = int(spec.hierarchical)
    ci[_core.I_HFLAG] = int(merge_same_component)
    ci[_core.I_HASJ] = int(spec.has_soft_terms)
    ci[_core.I_RHO1] = int(spec.rho == 1.0)
    cf = bounds_config(spec.pop_bounds, alpha=rule.alpha, rho=spec.rho)
    return ci, cf, spec.j_coefficients()
