import math
import warnings

import numpy as np
import pytest

from gsmc.graph import ConfigurationError, DistrictingScheme, LinkingEdgePlan, MapGraph, Plan
from gsmc.oracle import enumerate_balanced_plans
from gsmc.target import (
    PopulationBounds,
    SplittingSchedule,
    TargetSpec,
    is_reachable,
    log_target_density,
    schedule_pairs,
    score_j,
)

from helpers import forests_of, linking_sets

VERTICAL = Plan([0, 1, 0, 1], [1, 1])


def spec_for(graph, D, **kw):
    return TargetSpec(PopulationBounds.exact(graph, D), **kw)


def test_graph_density_on_2x2():
    g = MapGraph.grid(2, 2)
    spec = spec_for(g, 2)
    assert log_target_density(g, VERTICAL, spec) == 0.0
    assert log_target_density(g, Plan([0, 0, 1, 1], [1, 1]), spec) == 0.0


def test_unbalanced_or_discontiguous_plan_has_zero_density():
    g = MapGraph.grid(2, 2)
    spec = spec_for(g, 2)
    assert log_target_density(g, Plan([0, 0, 0, 1], [1, 1]), spec) == -math.inf
    diagonal = Plan([0, 1, 1, 0], [1, 1])
    assert log_target_density(g, diagonal, spec) == -math.inf


def test_forest_density_on_2x2():
    g = MapGraph.grid(2, 2)
    spec = spec_for(g, 2, space="forest")
    forests = list(forests_of(g, VERTICAL))
    assert len(forests) == 1
    assert log_target_density(g, forests[0], spec) == 0.0


def test_density_rejects_object_from_wrong_space():
    g = MapGraph.grid(2, 2)
    with pytest.raises(ValueError):
        log_target_density(g, VERTICAL, spec_for(g, 2, space="forest"))


@pytest.mark.parametrize("rows, cols, D, rho", [(2, 2, 2, 1.0), (1, 4, 2, 1.0), (2, 3, 2, 0.8), (3, 3, 3, 1.0)])
def test_forest_and_linking_densities_push_forward_to_plan_density(rows, cols, D, rho):
    g = MapGraph.grid(rows, cols)
    bounds = PopulationBounds.exact(g, D)
    plans = enumerate_balanced_plans(g, DistrictingScheme.single_member(D), bounds)
    for plan in plans:
        want = math.exp(log_target_density(g, plan, TargetSpec(bounds, rho=rho)))
        forests = list(forests_of(g, plan))
        f_spec = TargetSpec(bounds, rho=rho, space="forest")
        l_spec = TargetSpec(bounds, rho=rho, space="linking")
        forest_total = sum(math.exp(log_target_density(g, f, f_spec)) for f in forests)
        links = linking_sets(g, plan)
        link_total = sum(
            math.exp(log_target_density(g, LinkingEdgePlan(f, L), l_spec)) for f in forests for L in links
        )
        assert forest_total == pytest.approx(want, rel=1e-9)
        assert link_total == pytest.approx(want, rel=1e-9)


def test_soft_terms_enter_the_density():
    g = MapGraph.grid(2, 2, admin_unit=[0, 0, 1, 1])
    spec = spec_for(g, 2, soft_terms={"admin_splits": 0.5})
    assert score_j(g, VERTICAL, spec) == pytest.approx(1.0)
    assert log_target_density(g, VERTICAL, spec) == pytest.approx(-1.0)
    assert log_target_density(g, Plan([0, 0, 1, 1], [1, 1]), spec) == 0.0


def test_spec_validation():
    g = MapGraph.grid(2, 2)
    b = PopulationBounds.exact(g, 2)
    with pytest.raises(ConfigurationError):
        TargetSpec(b, space="tree")
    with pytest.raises(ConfigurationError):
        TargetSpec(b, soft_terms={"compactness": 1.0})
    with pytest.raises(ConfigurationError):
        TargetSpec(b, soft_terms={"admin_splits": math.inf})
    with pytest.raises(ConfigurationError):
        PopulationBounds(2.5, 3.0, 2.0)
    with pytest.warns(UserWarning):
        TargetSpec(b, rho=0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        TargetSpec(b, rho=0.8)


def test_schedule_pairs_examples():
    ten = DistrictingScheme.single_member(10)
    assert schedule_pairs(SplittingSchedule("district-only", ten), 1, 10, [10]) == [(1, 9)]
    any_valid = SplittingSchedule("any-valid", ten)
    assert schedule_pairs(any_valid, 2, 9, [1, 9]) == [(1, 8), (2, 7), (3, 6), (4, 5)]
    multi = SplittingSchedule("district-only", DistrictingScheme(5, 20, 3, 5))
    pairs = schedule_pairs(multi, 3, 10, [5, 5, 10])
    assert (5, 5) not in pairs
    assert pairs == [(3, 7), (4, 6)]


def test_any_valid_needs_single_member_scheme():
    with pytest.raises(ConfigurationError):
        SplittingSchedule("any-valid", DistrictingScheme(3, 7, 2, 3))


def test_reachability():
    scheme = DistrictingScheme.single_member(4)
    assert is_reachable(SplittingSchedule("district-only", scheme), [1, 3])
    assert not is_reachable(SplittingSchedule("district-only", scheme), [2, 2])
    assert is_reachable(SplittingSchedule("any-valid", scheme), [2, 2])
    assert not is_reachable(SplittingSchedule("any-valid", scheme), [1, 1, 1])
