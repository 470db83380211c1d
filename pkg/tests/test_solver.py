import numpy as np
import pytest

from biharmonic_nodal.fields import default_seeds
from biharmonic_nodal.flow import FlowConfig, Label, Tag
from biharmonic_nodal.solver import (
    BracketError,
    BudgetError,
    NodalSearchError,
    SolverConfig,
    bisect_label,
    bisect_threshold,
    bracket_ray,
    bisect_boundary,
    find_nodal,
    sign_census,
    verify_solution,
)


def test_bisect_threshold_synthetic():
    def classify(s):
        return Tag.ZERO if s < 0.37 else Tag.ESCAPED

    br = bisect_threshold(classify, 0.0, 1.0, 1e-10)
    assert br.s_high - br.s_low <= 1e-10
    assert br.s_star == pytest.approx(0.37, abs=1e-10)


def test_bisect_threshold_rejects_bad_bracket():
    with pytest.raises(BracketError):
        bisect_threshold(lambda s: Tag.ZERO, 0.0, 1.0, 1e-6)


def test_bisect_threshold_stops_on_critical_and_budget():
    def critical(s):
        return Tag.ZERO if s < 0.2 else Tag.ESCAPED if s > 0.8 else Tag.CRITICAL

    assert bisect_threshold(critical, 0.0, 1.0, 1e-8).critical_s == 0.5

    def budget(s):
        return Tag.ZERO if s == 0 else Tag.ESCAPED if s == 1 else Tag.UNDETERMINED

    with pytest.raises(BudgetError):
        bisect_threshold(budget, 0.0, 1.0, 1e-8)


def test_bisect_label_synthetic():
    def label(t):
        return Label.PLUS if t > 0.6 else Label.MINUS

    t, lab, hist = bisect_label(label, 0.0, 1.0, 1e-12)
    assert lab is None and t == pytest.approx(0.6, abs=1e-12)

    def with_gap(t):
        return Label.NEITHER if abs(t - 0.6) < 1e-3 else label(t)

    t, lab, _ = bisect_label(with_gap, 0.0, 1.0, 1e-12)
    assert lab is Label.NEITHER and abs(t - 0.6) < 1e-3


def test_sign_census_counts():
    c = sign_census(np.array([0.0, 1.0, 2.0, -1.0, -0.0001, 0.5]), 1e-3)
    assert (c.n_positive, c.n_negative, c.sign_changes) == (3, 1, 2)
    assert c.min_value == -1.0 and c.max_value == 2.0


def test_bracket_ray_errors(small_problem):
    with pytest.raises(BracketError):
        bracket_ray(small_problem, np.zeros(200), FlowConfig(), SolverConfig())


def test_bracket_ray_brackets(small_problem):
    ray = bracket_ray(small_problem, default_seeds(small_problem.grid)[0], FlowConfig(), SolverConfig())
    assert 0 < ray.s_low < ray.s_high
    assert small_problem.energy(ray.s_high * ray.direction) < 0


def test_bisect_boundary_budget_error(small_problem):
    cfg = FlowConfig(max_steps=1)
    ray = bracket_ray(small_problem, default_seeds(small_problem.grid)[0], cfg, SolverConfig())
    with pytest.raises(BudgetError):
        bisect_boundary(small_problem, ray, cfg, SolverConfig())


def test_signed_solutions_certified(small_problem, small_bundle):
    pos, neg = small_bundle.positive, small_bundle.negative
    assert pos.report.residual <= 1e-6 and pos.report.energy > 0
    np.testing.assert_array_equal(neg.field, -pos.field)
    assert pos.report.census.n_positive > 0
    # delivered as found: small negative tail values are reported, not hidden
    assert pos.report.census.n_negative == 0


def test_nodal_solution_changes_sign(small_bundle):
    nod = small_bundle.nodal
    c = nod.report.census
    assert c.n_positive >= 1 and c.n_negative >= 1
    assert nod.report.residual <= 1e-6 and nod.report.energy > small_bundle.positive.report.energy
    assert small_bundle.checks["distinct"]


def test_swapping_seeds_negates_nodal(small_problem, small_bundle):
    u, v = default_seeds(small_problem.grid)
    swapped = find_nodal(small_problem, -v, -u, FlowConfig(), SolverConfig()).solution.field
    z = small_bundle.nodal.field
    assert small_problem.norm(swapped + z) <= 1e-8 * small_problem.norm(z)


def test_find_nodal_preconditions(small_problem):
    u, v = default_seeds(small_problem.grid)
    with pytest.raises(ValueError):
        find_nodal(small_problem, v, u, FlowConfig(), SolverConfig())
    with pytest.raises(ValueError):
        find_nodal(small_problem, u, -u, FlowConfig(), SolverConfig())


def test_find_nodal_reports_uniform_labels(small_problem):
    # a huge absorption radius makes every trajectory count as absorbed at once
    u, v = default_seeds(small_problem.grid)
    with pytest.raises(NodalSearchError):
        find_nodal(small_problem, u, v, FlowConfig(alpha=50.0), SolverConfig(n_probes=3))


def test_verify_solution(small_problem, small_bundle):
    u = small_bundle.positive.field
    rep = verify_solution(small_problem, small_problem.apply_A(u), reference_energy=small_bundle.positive.report.energy)
    assert rep.residual <= 1e-10 and rep.weak_residual <= 1e-10
    assert rep.refinement_delta <= 1e-10
    with pytest.raises(ValueError):
        verify_solution(small_problem, np.zeros(200))


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol_s=0.0, n_probes=1)
