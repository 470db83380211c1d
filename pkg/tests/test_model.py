import numpy as np
import pytest

from biharmonic_nodal.fields import random_field
from biharmonic_nodal.model import (
    ModelError,
    NonlinearityModel,
    big_f_eval,
    energy,
    f_eval,
    growth_bound_check,
)
from biharmonic_nodal.radial_space import build_grid


def test_exponent_range_cites_bound():
    g = build_grid(5, 10.0, 20)
    with pytest.raises(ModelError, match="2_\\* - 2"):
        NonlinearityModel.from_terms(g, [(1.0, 9.0)])
    with pytest.raises(ModelError):
        NonlinearityModel.from_terms(g, [(1.0, 0.0)])
    with pytest.raises(ModelError):
        NonlinearityModel.from_terms(g, [(-1.0, 2.0)])
    with pytest.raises(ModelError):
        NonlinearityModel.from_terms(g, [(0.0, 2.0)])
    with pytest.raises(ModelError):
        NonlinearityModel.from_terms(g, [])


def test_f_is_odd_and_derivatives_consistent(rng):
    g = build_grid(6, 10.0, 30)
    m = NonlinearityModel.from_terms(g, [(1.0, 2.0), (lambda r: 1 + np.exp(-r), 0.5)])
    s = rng.normal(size=30) * 3
    np.testing.assert_array_equal(m.f(-s), -m.f(s))
    d = 1e-6
    np.testing.assert_allclose((m.big_f(s + d) - m.big_f(s - d)) / (2 * d), m.f(s), rtol=1e-6)
    np.testing.assert_allclose((m.f(s + d) - m.f(s - d)) / (2 * d), m.df(s), rtol=1e-6)
    assert f_eval(m, s[3], 3) == pytest.approx(m.f(s)[3])
    assert big_f_eval(m, s[3], 3) == pytest.approx(m.big_f(s)[3])


def test_gradient_is_riesz_representative(small_problem, rng):
    u = 3 * random_field(small_problem.grid, rng)
    h = random_field(small_problem.grid, rng)
    d = 1e-4
    fd = (small_problem.energy(u + d * h) - small_problem.energy(u - d * h)) / (2 * d)
    g = small_problem.gradient(u)
    assert g @ (small_problem.structure.gram @ h) == pytest.approx(fd, rel=1e-6)


def test_energy_report_fields(small_problem, rng):
    u = random_field(small_problem.grid, rng)
    rep = energy(small_problem.structure, small_problem.weights, small_problem.model, u)
    assert rep.total == pytest.approx(small_problem.energy(u), rel=1e-12)
    assert rep.quadratic > 0 and rep.potential_term >= 0
    with pytest.raises(FloatingPointError), np.errstate(over="ignore", invalid="ignore"):
        energy(small_problem.structure, small_problem.weights, small_problem.model, np.full(200, 1e200))


def test_growth_bound_holds_on_fresh_pairs(small_problem):
    rep = growth_bound_check(small_problem.structure, small_problem.weights, small_problem.model, 30, rng=7)
    assert rep.holds_on_validation
    assert rep.exponent == 2.0 and rep.const > 0


def test_energy_negative_far_along_a_ray(small_problem, rng):
    u = np.abs(random_field(small_problem.grid, rng))
    assert small_problem.energy(1e-3 * u) > 0
    assert small_problem.energy(1e3 * u) < 0
