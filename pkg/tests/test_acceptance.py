"""Acceptance criteria, one test per criterion.

Each test records a single ``[criterion k] PASS|FAIL ...`` line; the lines are
printed in the pytest terminal summary and when this file is run directly.
Tolerances are the stated ones; nothing is relaxed to make a line pass.
"""

import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from biharmonic_nodal.fields import default_seeds, random_field, random_load
from biharmonic_nodal.flow import FlowConfig, integrate
from biharmonic_nodal.model import build_problem
from biharmonic_nodal.moreau import enumerate_projection, project_onto_cone
from biharmonic_nodal.radial_space import (
    assemble_quadrature,
    ball_volume,
    build_grid,
    build_structure,
    inner,
    norm,
    solve_linear_positivity,
)
from biharmonic_nodal.solver import (
    SolverConfig,
    bisect_threshold,
    bracket_ray,
    find_signed_solutions,
    solve,
)


def report(k, ok, detail):
    line = f"[criterion {k}] {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def timed_reference(reference_problem):
    t0 = time.perf_counter()
    bundle = solve(reference_problem, FlowConfig(), SolverConfig())
    return bundle, time.perf_counter() - t0


def test_criterion_1_oracle_equivalence():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for n in (6, 8, 10, 12):
        s = build_structure(build_grid(5, 20.0, n), 1.0)
        fields = np.array([random_field(s.grid, rng) for _ in range(200)])
        exact = enumerate_projection(s.dense_gram(), fields)
        for u, p in zip(fields, exact):
            worst = max(worst, norm(s, project_onto_cone(s, u).positive - p))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 60
    assert report(1, ok, f"max gram-norm error {worst:.2e} (<= 1e-8) over 4x200 fields in {elapsed:.1f} s (< 60 s)")


def test_criterion_2_projection_properties():
    problem = build_problem(n_nodes=200)
    s, rng = problem.structure, np.random.default_rng(2)
    failures = {"idempotence": 0, "nonexpansive": 0, "homogeneity": 0, "orthogonality": 0, "kkt": 0}
    prev_u = prev_p = None
    for _ in range(500):
        u = random_field(problem.grid, rng) * 10.0 ** rng.uniform(-2, 2)
        nu = norm(s, u)
        sp = project_onto_cone(s, u)
        if sp.kkt_scaled > 1e-10 or sp.compl_scaled > 1e-10 or np.any(sp.positive < 0):
            failures["kkt"] += 1
        if abs(inner(s, sp.positive, sp.dual)) > 1e-10 * nu**2:
            failures["orthogonality"] += 1
        if norm(s, project_onto_cone(s, sp.positive).positive - sp.positive) > 1e-10 * nu:
            failures["idempotence"] += 1
        c = 10.0 ** rng.uniform(-1, 1)
        if norm(s, project_onto_cone(s, c * u).positive - c * sp.positive) > 1e-10 * c * nu:
            failures["homogeneity"] += 1
        if prev_u is not None and norm(s, sp.positive - prev_p) > norm(s, u - prev_u) * (1 + 1e-10):
            failures["nonexpansive"] += 1
        prev_u, prev_p = u, sp.positive
    total = sum(failures.values())
    assert report(2, total == 0, f"500 fields at n=200, failures {failures}")


def test_criterion_3_energy_monotonicity(reference_problem):
    # half the starts are random multiples of random fields, half sit within
    # 1e-6 of the escape threshold on random rays, where trajectories are long
    p, rng = reference_problem, np.random.default_rng(3)
    cfg, scfg = FlowConfig(max_steps=1000), SolverConfig()
    starts = []
    for k in range(60):
        u = random_field(p.grid, rng)
        if k % 2:
            ray = bracket_ray(p, u, cfg, scfg)
            br = bisect_threshold(lambda x: integrate(p, x * ray.direction, cfg)[0].tag,
                                  ray.s_low, ray.s_high, 1e-6)
            starts.append(br.s_low * ray.direction)
        else:
            starts.append(u * 10.0 ** rng.uniform(0.0, 2.5) / p.norm(u))
    steps = bad = 0
    worst = -np.inf
    for u in starts:
        _, rec = integrate(p, u, cfg)
        e = np.asarray(rec.energies)
        inc = (e[1:] - e[:-1]) / np.maximum(np.abs(e[:-1]), 1e-300)
        steps += inc.size
        bad += int(np.sum(inc > 1e-12))
        worst = max(worst, float(inc.max(initial=-np.inf)))
    assert report(3, bad == 0, f"{len(starts)} trajectories, {steps} steps, {bad} energy increases "
                  f"beyond 1e-12 (largest relative change {worst:.1e})")


def test_criterion_4_gradient_consistency(reference_problem):
    rng = np.random.default_rng(4)
    p, d = reference_problem, 1e-4
    worst = 0.0
    for _ in range(20):
        u = random_field(p.grid, rng) * 10.0 ** rng.uniform(-1, 1)
        h = random_field(p.grid, rng)
        fd = (p.energy(u + d * h) - p.energy(u - d * h)) / (2 * d)
        g = inner(p.structure, p.gradient(u), h)
        worst = max(worst, abs(g - fd) / abs(fd))
    assert report(4, worst <= 1e-5, f"max relative gap {worst:.2e} (<= 1e-5) over 20 pairs")


def test_criterion_5_three_solutions(reference_problem, timed_reference):
    bundle, elapsed = timed_reference
    p = reference_problem
    u1, u2, u3 = bundle.positive.field, bundle.negative.field, bundle.nodal.field
    inf = [np.abs(x).max() for x in (u1, u2, u3)]
    parts = {
        "u1 min >= -1e-8|u1|": (u1.min() >= -1e-8 * inf[0], f"min/max={u1.min() / inf[0]:.3e}"),
        "u2 = -u1": (np.array_equal(u2, -u1), ""),
        "u2 max <= 1e-8|u2|": (u2.max() <= 1e-8 * inf[1], f"max/|u2|={u2.max() / inf[1]:.3e}"),
        "u3 changes sign": (u3.min() < -1e-3 * inf[2] and u3.max() > 1e-3 * inf[2],
                            f"min/max={u3.min() / u3.max():.3e}"),
        "residuals <= 1e-6": (max(c.report.residual for c in (bundle.positive, bundle.negative, bundle.nodal)) <= 1e-6, ""),
        "energies > 0": (min(p.energy(x) for x in (u1, u2, u3)) > 0, ""),
        "pairwise distinct": (bundle.checks["distinct"], ""),
        "runtime < 10 min": (elapsed < 600, f"{elapsed:.1f} s"),
    }
    failed = [f"{k} ({v})" if v else k for k, (ok, v) in parts.items() if not ok]
    ok = not failed
    detail = (f"I = {p.energy(u1):.6f}, {p.energy(u3):.6f}; "
              + ("all parts hold" if ok else "failed: " + "; ".join(failed)))
    assert report(5, ok, detail)


def test_criterion_6_refinement(timed_reference):
    coarse, _ = timed_reference
    fine = solve(build_problem(n_nodes=800), FlowConfig(), SolverConfig())
    deltas = {}
    for name in ("positive", "negative", "nodal"):
        e0 = getattr(coarse, name).report.energy
        deltas[name] = abs(getattr(fine, name).report.energy - e0) / abs(e0)
    ok = max(deltas.values()) <= 0.02
    assert report(6, ok, "relative energy change n=400 -> 800: "
                  + ", ".join(f"{k} {v:.2e}" for k, v in deltas.items()))


def test_criterion_7_linear_positivity(reference_problem):
    rng = np.random.default_rng(7)
    s = reference_problem.structure
    worst, failures, where = 0.0, 0, None
    for _ in range(100):
        v, rep = solve_linear_positivity(s, s.weights, random_load(reference_problem.grid, rng))
        if not rep.positive:
            failures += 1
        if rep.relative_min < worst:
            worst, where = rep.relative_min, reference_problem.grid.radii[np.argmin(v)]
    detail = f"{failures}/100 loads give min v < -1e-8 max v; worst min/max {worst:.3e}"
    if where is not None:
        detail += f" at r = {where:.2f}"
    assert report(7, failures == 0, detail)


def test_criterion_8_odd_symmetry(reference_problem):
    bump = default_seeds(reference_problem.grid)[0]
    a, _ = find_signed_solutions(reference_problem, FlowConfig(), SolverConfig(), seed=bump)
    b, _ = find_signed_solutions(reference_problem, FlowConfig(), SolverConfig(), seed=-bump)
    gap = reference_problem.norm(a.field + b.field)
    assert report(8, gap <= 1e-8, f"||u(bump) + u(-bump)|| = {gap:.2e} (<= 1e-8)")


def test_criterion_9_operator_exactness():
    g = build_grid(5, 20.0, 400)
    s = build_structure(g, 1.0)
    r = g.radii
    lap_err = np.abs(s.laplacian @ (g.r_max**2 - r**2) + 2 * g.dim_n).max() / (2 * g.dim_n)
    interior = np.abs((s.laplacian @ (1.0 + 3.0 * r**2))[:-1] - 6.0 * g.dim_n).max() / (6.0 * g.dim_n)
    errs = []
    for n in (399, 799, 1599):
        gg = build_grid(5, 20.0, n)
        errs.append(abs(assemble_quadrature(gg).sum() - ball_volume(5, 20.0)))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = max(lap_err, interior) <= 1e-10 and all(3.6 <= q <= 4.4 for q in ratios)
    assert report(9, ok, f"Laplacian error on quadratics {max(lap_err, interior):.1e}; "
                  f"volume error ratios {ratios[0]:.3f}, {ratios[1]:.3f}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
