"""Sequential Monte Carlo sampling of redistricting plans from a spanning-tree target."""

from .context import CutRule, PhiRule, WeightContext
from .diagnostics import RunSummary, rhat, summary_statistics, weighted_se
from .graph import (
    ConfigurationError,
    DistrictingScheme,
    ForestPlan,
    GraphError,
    LinkingEdgePlan,
    MapGraph,
    Plan,
    QuotientMultigraph,
    admin_splits,
    edges_removed,
    quotient_multigraph,
)
from .hierarchy import hierarchical_wilson, is_hierarchical_plan, log_tau_eta
from .io import load_graph, read_plans, save_graph, write_plans
from .kernels import estimate_K, split_forest_space, split_graph_space, split_linking_space
from .mcmc import mergesplit_step_forest, mergesplit_step_graph, mergesplit_step_linking
from .oracle import EnumerationBudgetError, enumerate_balanced_plans, exact_distribution
from .smc import Ensemble, RejectionCapError, RunConfig, run_gsmc
from .target import PopulationBounds, SplittingSchedule, TargetSpec, log_target_density
from .trees import enumerate_tree_cuts, log_spanning_tree_count, wilson_tree
from .weights import (
    log_optimal_weight_forest,
    log_optimal_weight_graph,
    log_optimal_weight_linking,
    normalizing_constant_estimate,
)

__all__ = [
    "ConfigurationError",
    "CutRule",
    "DistrictingScheme",
    "Ensemble",
    "EnumerationBudgetError",
    "ForestPlan",
    "GraphError",
    "LinkingEdgePlan",
    "MapGraph",
    "PhiRule",
    "Plan",
    "PopulationBounds",
    "QuotientMultigraph",
    "RejectionCapError",
    "RunConfig",
    "RunSummary",
    "SplittingSchedule",
    "TargetSpec",
    "WeightContext",
    "admin_splits",
    "edges_removed",
    "enumerate_balanced_plans",
    "enumerate_tree_cuts",
    "estimate_K",
    "exact_distribution",
    "hierarchical_wilson",
    "is_hierarchical_plan",
    "load_graph",
    "log_optimal_weight_forest",
    "log_optimal_weight_graph",
    "log_optimal_weight_linking",
    "log_spanning_tree_count",
    "log_tau_eta",
    "log_target_density",
    "mergesplit_step_forest",
    "mergesplit_step_graph",
    "mergesplit_step_linking",
    "normalizing_constant_estimate",
    "quotient_multigraph",
    "read_plans",
    "rhat",
    "run_gsmc",
    "save_graph",
    "split_forest_space",
    "split_graph_space",
    "split_linking_space",
    "summary_statistics",
    "weighted_se",
    "wilson_tree",
    "write_plans",
]
