"""Signed and sign-changing critical points from the descent flow.

Signed solutions: along a ray ``s * d`` with ``d`` in a cone, small ``s`` flows
to zero and large ``s`` has negative energy.  Bisection on ``s`` converges to
the boundary of the basin of zero, where trajectories approach a nontrivial
critical point; Newton polishing finishes it.

Nodal solution: for the path ``h(t) = S (t u + (1 - t) v)`` with ``u >= 0``,
``v <= 0`` and ``I(h(t)) < 0``, each ``t`` has a threshold ``s*(t)``.  The
trajectory from ``s*(t) h(t)`` is labelled by the cone neighbourhood it
enters while it still tracks the basin boundary.  Bisection on ``t`` between
a ``Minus`` and a ``Plus`` label ends at a trajectory that enters neither,
and its closest approach to a critical point is polished into the nodal
solution.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .fields import default_seeds
from .flow import (
    FlowConfig,
    Label,
    Tag,
    TrajectoryRecord,
    absorption_label,
    fixed_point_residual,
    integrate,
    polish_critical,
)
from .model import Problem
from .radial_space import solve_gram

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Base class; ``exit_code`` feeds the CLI contract."""

    exit_code = 1


class BracketError(SolverError):
    exit_code = 3


class NodalSearchError(SolverError):
    exit_code = 4


class BudgetError(SolverError):
    exit_code = 5


@dataclass(frozen=True)
class SolverConfig:
    tol_s: float = 1e-10
    tol_t: float = 1e-15
    tol_crit: float = 1e-6
    polish_tol: float = 1e-11
    delta_sign: float = 1e-3
    tol_sign: float = 1e-8
    n_probes: int = 5
    path_samples: int = 101
    shadow_tol: float = 0.05
    max_scale_doublings: int = 60
    max_t_bisections: int = 60

    def __post_init__(self):
        errors = []
        for name in ("tol_s", "tol_t", "tol_crit", "polish_tol", "delta_sign", "tol_sign", "shadow_tol"):
            if not getattr(self, name) > 0:
                errors.append(f"{name} must be positive")
        if self.n_probes < 2:
            errors.append("n_probes must be >= 2")
        if self.path_samples < 2:
            errors.append("path_samples must be >= 2")
        if errors:
            raise ValueError("invalid SolverConfig: " + "; ".join(errors))


@dataclass(frozen=True)
class RaySpec:
    direction: np.ndarray = field(repr=False)
    s_low: float
    s_high: float
    tol_s: float

    def __post_init__(self):
        if not 0 <= self.s_low < self.s_high:
            raise ValueError(f"need 0 <= s_low < s_high, got {self.s_low}, {self.s_high}")


@dataclass(frozen=True)
class SignCensus:
    min_value: float
    max_value: float
    n_positive: int
    n_negative: int
    sign_changes: int
    threshold: float


def sign_census(u, delta: float) -> SignCensus:
    """Counts of nodes beyond ``+-delta * max|u|`` and sign changes among them."""
    u = np.asarray(u, dtype=float)
    thr = delta * float(np.max(np.abs(u)))
    signed = np.sign(u[np.abs(u) > thr])
    changes = int(np.count_nonzero(signed[1:] != signed[:-1])) if signed.size else 0
    return SignCensus(
        float(u.min()), float(u.max()), int(np.sum(u > thr)), int(np.sum(u < -thr)), changes, thr
    )


@dataclass(frozen=True)
class VerificationReport:
    residual: float
    weak_residual: float
    nodal_residual: float
    energy: float
    norm: float
    census: SignCensus
    refinement_delta: float | None = None


def verify_solution(problem: Problem, u, delta_sign: float = 1e-3, reference_energy=None):
    """Residuals, energy and sign census of a candidate critical point.

    ``residual`` is ``||u - A(u)|| / ||u||``.  ``weak_residual`` is the dual
    norm ``sqrt(r^T gram^{-1} r)`` of ``r = gram u - W f(u)`` relative to
    ``||u||``, computed without ``A``.  ``nodal_residual`` is ``max|r / w|``
    relative to ``max|f(u)| + max|V u|``.  With ``reference_energy`` (the same
    solution on another mesh) the relative energy change is reported too.
    """
    u = problem.grid.check_field(u, "u")
    if not np.any(u):
        raise ValueError("verify_solution needs a nonzero field")
    nu = problem.norm(u)
    s = problem.structure
    r = s.gram @ u - problem.weights * problem.model.f(u)
    weak = math.sqrt(max(float(np.dot(r, solve_gram(s, r))), 0.0)) / nu
    scale = np.max(np.abs(problem.model.f(u))) + np.max(np.abs(s.potential * u))
    nodal = float(np.max(np.abs(r / problem.weights)) / scale)
    e = problem.energy(u)
    delta = None
    if reference_energy is not None:
        delta = abs(e - reference_energy) / abs(reference_energy)
    return VerificationReport(
        fixed_point_residual(problem, u), weak, nodal, e, nu, sign_census(u, delta_sign), delta
    )


# -- bisection on the ray ------------------------------------------------------


@dataclass(frozen=True)
class ThresholdBracket:
    s_low: float
    s_high: float
    critical_s: float | None
    iterations: int

    @property
    def s_star(self) -> float:
        return self.critical_s if self.critical_s is not None else 0.5 * (self.s_low + self.s_high)


def bisect_threshold(classify: Callable[[float], Tag], s_low, s_high, tol_s, max_iter=200):
    """Bisect the switch from ``ConvergedZero`` (low) to ``EscapedNegativeEnergy`` (high).

    ``tol_s`` is relative to ``s_high``.  A midpoint classified
    ``ConvergedCritical`` sits on the boundary and ends the search.
    ``Undetermined`` midpoints raise :class:`BudgetError`.
    """
    tags = {s_low: classify(s_low), s_high: classify(s_high)}
    if tags[s_low] is not Tag.ZERO or tags[s_high] is not Tag.ESCAPED:
        raise BracketError(
            f"invalid bracket: {s_low} -> {tags[s_low].value}, {s_high} -> {tags[s_high].value}"
        )
    width = tol_s * s_high
    it = 0
    while s_high - s_low > width and it < max_iter:
        it += 1
        mid = 0.5 * (s_low + s_high)
        if not s_low < mid < s_high:
            break
        tag = classify(mid)
        if tag is Tag.ZERO:
            s_low = mid
        elif tag is Tag.ESCAPED:
            s_high = mid
        elif tag is Tag.CRITICAL:
            return ThresholdBracket(s_low, s_high, mid, it)
        else:
            raise BudgetError(f"flow budget exhausted at s={mid!r} in [{s_low!r}, {s_high!r}]")
    return ThresholdBracket(s_low, s_high, None, it)


def bracket_ray(problem: Problem, direction, flow_cfg: FlowConfig, solver_cfg: SolverConfig):
    """Find ``s_low`` flowing to zero and ``s_high`` with negative energy on ``s * direction``."""
    d = problem.grid.check_field(direction, "direction")
    if not np.any(d):
        raise BracketError("direction must be nonzero")
    d = d / problem.norm(d)
    s_high, trail = 1.0, []
    for _ in range(solver_cfg.max_scale_doublings):
        e = problem.energy(s_high * d)
        trail.append((s_high, e))
        if e < flow_cfg.escape_energy:
            break
        s_high *= 2.0
    else:
        raise BracketError(f"energy stays above escape level along the ray: {trail}")
    s_low = 0.5 * s_high
    for _ in range(solver_cfg.max_scale_doublings):
        if integrate(problem, s_low * d, flow_cfg)[0].tag is Tag.ZERO:
            break
        s_low *= 0.5
    else:
        s_low = 0.0
    return RaySpec(d, s_low, s_high, solver_cfg.tol_s)


@dataclass
class BoundaryProbe:
    """Near-threshold trajectories on one ray and what they approach."""

    bracket: ThresholdBracket
    record: TrajectoryRecord = field(repr=False)
    shadow_steps: int
    closest: np.ndarray = field(repr=False)
    closest_residual: float
    alpha: float
    label: Label | None = None


def _shadow_length(rec_lo: TrajectoryRecord, rec_hi: TrajectoryRecord, problem, tol) -> int:
    """Number of leading steps where the two bracket trajectories agree to ``tol``."""
    n = min(len(rec_lo.states), len(rec_hi.states))
    for k in range(n):
        if problem.norm(rec_lo.states[k] - rec_hi.states[k]) > tol * rec_lo.norms[k]:
            return k
    return len(rec_lo)


def probe_ray(problem, direction, s_low, s_high, flow_cfg, solver_cfg, monitor=False):
    """Bisect the threshold on ``s * direction`` and follow the trajectories beside it.

    The low and high ends of the final bracket are integrated with every state
    kept.  While they agree (the shadow prefix) they track the basin boundary;
    the prefix state with the smallest relative gradient is the closest
    approach to a critical point on it.
    """
    d = np.asarray(direction, dtype=float)
    cfg = replace(flow_cfg, stride=1)

    def classify(s):
        return integrate(problem, s * d, cfg)[0].tag

    br = bisect_threshold(classify, s_low, s_high, solver_cfg.tol_s)
    if br.critical_s is not None:
        u0 = br.critical_s * d
        out, rec = integrate(problem, u0, cfg, monitor=monitor)
        shadow = len(rec)
    else:
        u0 = br.s_low * d
        out, rec = integrate(problem, u0, cfg, monitor=monitor)
        _, rec_hi = integrate(problem, br.s_high * d, cfg)
        shadow = max(_shadow_length(rec, rec_hi, problem, solver_cfg.shadow_tol), 1)
    rel = np.asarray(rec.grad_norms[:shadow]) / np.maximum(rec.norms[:shadow], 1e-300)
    k = int(np.argmin(rel))
    alpha = flow_cfg.alpha * problem.norm(u0)
    probe = BoundaryProbe(br, rec, shadow, rec.states[k], float(rel[k]), alpha)
    if monitor:
        probe.label = absorption_label(_prefix(rec, shadow), alpha)
    return probe


def _prefix(rec: TrajectoryRecord, k: int) -> TrajectoryRecord:
    return TrajectoryRecord(
        energies=rec.energies[:k],
        grad_norms=rec.grad_norms[:k],
        norms=rec.norms[:k],
        dist_plus=rec.dist_plus[:k],
        dist_minus=rec.dist_minus[:k],
        steps_taken=k,
    )


@dataclass(frozen=True)
class CriticalPoint:
    field: np.ndarray = field(repr=False)
    report: VerificationReport
    provenance: dict
    trajectory: TrajectoryRecord | None = dataclasses.field(default=None, repr=False, compare=False)


def _certify(problem, u, flow_cfg, solver_cfg, what, provenance, trajectory=None):
    pol = polish_critical(problem, u, tol=solver_cfg.polish_tol)
    rep = verify_solution(problem, pol.field, solver_cfg.delta_sign)
    ok = (
        rep.residual <= solver_cfg.tol_crit
        and rep.norm > flow_cfg.tol_zero
        and rep.energy > 0
    )
    provenance = dict(provenance, polish_iterations=pol.iterations, polish_converged=pol.converged)
    if not ok:
        raise SolverError(
            f"{what}: polished point not certified (residual={rep.residual:.3e}, "
            f"norm={rep.norm:.3e}, energy={rep.energy:.6g})"
        )
    return CriticalPoint(pol.field, rep, provenance, trajectory)


def bisect_boundary(problem, ray: RaySpec, flow_cfg, solver_cfg):
    """Threshold scale on the ray and the critical point its trajectory approaches."""
    probe = probe_ray(problem, ray.direction, ray.s_low, ray.s_high, flow_cfg, solver_cfg, monitor=True)
    br = probe.bracket
    prov = {
        "s_low": br.s_low,
        "s_high": br.s_high,
        "s_star": br.s_star,
        "bisections": br.iterations,
        "closest_residual": probe.closest_residual,
        "shadow_steps": probe.shadow_steps,
    }
    try:
        cp = _certify(problem, probe.closest, flow_cfg, solver_cfg, "ray bisection", prov, probe.record)
    except SolverError as exc:
        raise BudgetError(f"{exc}; bracket [{br.s_low!r}, {br.s_high!r}]") from exc
    return br.s_star, cp


def find_signed_solutions(problem, flow_cfg, solver_cfg, seed=None):
    """Critical points from the rays through ``seed`` and ``-seed``.

    ``seed`` defaults to the positive bump of :func:`default_seeds`.  For odd
    ``f`` the second run is the exact mirror of the first.
    """
    if seed is None:
        seed = default_seeds(problem.grid)[0]
    seed = problem.grid.check_field(seed, "seed")
    out = []
    for sign in (1.0, -1.0):
        ray = bracket_ray(problem, sign * seed, flow_cfg, solver_cfg)
        s_star, cp = bisect_boundary(problem, ray, flow_cfg, solver_cfg)
        out.append(cp)
    return out[0], out[1]


# -- nodal search ----------------------------------------------------------------


@dataclass
class NodalSearch:
    solution: CriticalPoint
    t_star: float
    path_scale: float
    labels: list


def _path_scale(problem, u, v, flow_cfg, solver_cfg):
    ts = np.linspace(0.0, 1.0, solver_cfg.path_samples)
    s = 1.0
    for _ in range(solver_cfg.max_scale_doublings):
        if max(problem.energy(s * (t * u + (1 - t) * v)) for t in ts) < flow_cfg.escape_energy:
            return s
        s *= 2.0
    raise BracketError("no path scale with negative energy along the whole path")


def bisect_label(label_fn: Callable[[float], Label], t_minus, t_plus, tol_t, max_iter=60):
    """Bisect between a ``Minus`` and a ``Plus`` label until a ``Neither`` probe.

    Returns ``(t, label, history)``; ``label`` is ``Neither`` on success,
    otherwise the interval collapsed without one.
    """
    history = []
    for _ in range(max_iter):
        if abs(t_plus - t_minus) <= tol_t:
            break
        t = 0.5 * (t_minus + t_plus)
        if t in (t_minus, t_plus):
            break
        lab = label_fn(t)
        history.append((t, lab))
        if lab is Label.NEITHER:
            return t, lab, history
        if lab is Label.MINUS:
            t_minus = t
        else:
            t_plus = t
    return 0.5 * (t_minus + t_plus), None, history


def find_nodal(problem, u_plus, v_minus, flow_cfg, solver_cfg):
    """Sign-changing critical point from the path between ``u_plus`` and ``v_minus``."""
    u = problem.grid.check_field(u_plus, "u_plus")
    v = problem.grid.check_field(v_minus, "v_minus")
    if np.any(u < 0) or np.any(v > 0):
        raise ValueError("u_plus must be >= 0 and v_minus <= 0")
    u = u / problem.norm(u)
    v = v / problem.norm(v)
    if min(problem.norm(u + v), problem.norm(u - v)) < 1e-12:
        raise ValueError("u_plus and v_minus must be linearly independent")
    S = _path_scale(problem, u, v, flow_cfg, solver_cfg)

    probes = {}

    def run(t):
        probe = probe_ray(problem, S * (t * u + (1 - t) * v), 0.0, 1.0, flow_cfg, solver_cfg, monitor=True)
        probes[t] = probe
        log.debug("t=%r label=%s closest=%.2e", t, probe.label, probe.closest_residual)
        return probe.label

    grid_t = np.linspace(0.0, 1.0, solver_cfg.n_probes)
    labels = [(float(t), run(float(t))) for t in grid_t]
    t_star = None
    for t, lab in labels:
        if lab is Label.NEITHER and 0.0 < t < 1.0:
            t_star = t
            break
    if t_star is None:
        pair = next(
            ((a, b) for (a, la), (b, lb) in zip(labels, labels[1:])
             if la is Label.MINUS and lb is Label.PLUS),
            None,
        )
        if pair is None:
            raise NodalSearchError(
                "no Minus->Plus switch along the path: "
                + ", ".join(f"{t:.3f}:{lab.value}" for t, lab in labels)
            )
        t_star, lab, hist = bisect_label(run, pair[0], pair[1], solver_cfg.tol_t, solver_cfg.max_t_bisections)
        labels.extend(hist)
        if lab is None:
            raise NodalSearchError(
                f"t-bisection collapsed at t={t_star!r} without a Neither trajectory"
            )
    probe = probes[t_star]
    prov = {
        "t_star": t_star,
        "path_scale": S,
        "s_low": probe.bracket.s_low,
        "s_high": probe.bracket.s_high,
        "closest_residual": probe.closest_residual,
        "t_probes": len(labels),
    }
    try:
        cp = _certify(problem, probe.closest, flow_cfg, solver_cfg, "nodal search", prov, probe.record)
    except SolverError as exc:
        raise NodalSearchError(str(exc)) from exc
    c = cp.report.census
    thr = solver_cfg.delta_sign * max(abs(c.min_value), abs(c.max_value))
    if not (c.min_value < -thr and c.max_value > thr):
        raise NodalSearchError(f"polished point does not change sign: {c}")
    return NodalSearch(cp, t_star, S, [(t, lab.value) for t, lab in labels])


# -- the three solutions -------------------------------------------------------------


@dataclass
class SolutionBundle:
    positive: CriticalPoint
    negative: CriticalPoint
    nodal: CriticalPoint
    checks: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return all(self.checks.values())


def bundle_checks(problem, bundle_fields, reports, flow_cfg, solver_cfg) -> dict:
    u1, u2, u3 = bundle_fields
    r1, r2, r3 = reports
    checks = {}
    inf = [float(np.max(np.abs(x))) for x in (u1, u2, u3)]
    checks["positive_sign"] = r1.census.min_value >= -solver_cfg.tol_sign * inf[0]
    checks["negative_sign"] = r2.census.max_value <= solver_cfg.tol_sign * inf[1]
    checks["nodal_sign"] = (
        r3.census.min_value < -solver_cfg.delta_sign * inf[2]
        and r3.census.max_value > solver_cfg.delta_sign * inf[2]
    )
    for name, r in zip(("positive", "negative", "nodal"), reports):
        checks[f"{name}_residual"] = r.residual <= solver_cfg.tol_crit
        checks[f"{name}_energy"] = r.energy > 0
        checks[f"{name}_norm"] = r.norm > flow_cfg.tol_zero
    scale = 10.0 * solver_cfg.tol_crit * max(r.norm for r in reports)
    checks["distinct"] = min(
        problem.norm(u1 - u2), problem.norm(u1 - u3), problem.norm(u2 - u3)
    ) > scale
    return checks


def solve(problem, flow_cfg=None, solver_cfg=None, seeds=None) -> SolutionBundle:
    """Positive, negative and nodal critical points with their certificates."""
    flow_cfg = flow_cfg or FlowConfig()
    solver_cfg = solver_cfg or SolverConfig()
    u_plus, v_minus = default_seeds(problem.grid) if seeds is None else seeds
    pos, neg = find_signed_solutions(problem, flow_cfg, solver_cfg, seed=u_plus)
    nod = find_nodal(problem, u_plus, v_minus, flow_cfg, solver_cfg).solution
    fields = (pos.field, neg.field, nod.field)
    checks = bundle_checks(problem, fields, (pos.report, neg.report, nod.report), flow_cfg, solver_cfg)
    return SolutionBundle(pos, neg, nod, checks)
