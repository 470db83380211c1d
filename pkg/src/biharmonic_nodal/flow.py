"""Explicit descent flow ``u' = A(u) - u`` and trajectory classification.

A step ``u + tau (A(u) - u)`` is accepted only if the energy does not
increase; otherwise ``tau`` shrinks geometrically down to ``step_min``.
Trajectories end as soon as one of the outcome tests fires:

* ``ConvergedZero``: ``||u|| <= tol_zero``;
* ``EscapedNegativeEnergy``: ``I(u) < escape_energy < 0``.  Energy never
  increases and ``I >= 0`` on the closure of the basin of zero, so this
  certifies that the start point lies outside it;
* ``ConvergedCritical``: ``||u - A(u)|| <= tol_crit ||u||``;
* ``Undetermined``: the step budget ran out.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded

from .model import Problem
from .moreau import project_onto_cone
from .radial_space import TOL_POS, norm


class Tag(str, enum.Enum):
    ZERO = "ConvergedZero"
    CRITICAL = "ConvergedCritical"
    ESCAPED = "EscapedNegativeEnergy"
    UNDETERMINED = "Undetermined"


class Label(str, enum.Enum):
    PLUS = "Plus"
    MINUS = "Minus"
    NEITHER = "Neither"


@dataclass(frozen=True)
class FlowConfig:
    step_init: float = 1.0
    step_min: float = 1e-6
    shrink: float = 0.5
    tol_crit: float = 1e-4
    tol_zero: float = 1e-4
    escape_energy: float = -1e-8
    alpha: float = 0.1
    max_steps: int = 5000
    stride: int = 10

    def __post_init__(self):
        errors = []
        if not 0 < self.step_min <= self.step_init:
            errors.append("need 0 < step_min <= step_init")
        if not 0 < self.shrink < 1:
            errors.append("need 0 < shrink < 1")
        if self.tol_crit <= 0 or self.tol_zero <= 0:
            errors.append("tol_crit and tol_zero must be positive")
        if not self.escape_energy < 0:
            errors.append("escape_energy must be negative")
        if self.alpha <= 0:
            errors.append("alpha must be positive")
        if self.max_steps < 0 or self.stride < 1:
            errors.append("need max_steps >= 0 and stride >= 1")
        if errors:
            raise ValueError("invalid FlowConfig: " + "; ".join(errors))


@dataclass
class TrajectoryRecord:
    """Per-step observables of one trajectory plus sampled states.

    ``energies``, ``grad_norms``, ``dist_plus`` and ``dist_minus`` have one
    entry per visited state (step 0 is the initial field).  Cone distances
    are NaN when monitoring is off.  ``states`` holds every ``stride``-th
    state and the terminal one, indexed by ``state_steps``.
    """

    energies: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    dist_plus: list = field(default_factory=list)
    dist_minus: list = field(default_factory=list)
    states: list = field(default_factory=list)
    state_steps: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    first_absorbed: tuple | None = None
    steps_taken: int = 0

    def __len__(self):
        return len(self.energies)


@dataclass(frozen=True)
class Outcome:
    tag: Tag
    terminal: np.ndarray = field(repr=False)
    terminal_energy: float
    terminal_grad_norm: float
    terminal_norm: float
    steps: int


@dataclass(frozen=True)
class StepResult:
    field: np.ndarray
    accepted: bool
    tau_used: float
    energy: float


def flow_step(problem: Problem, u, tau: float, config: FlowConfig, energy_u=None, a_u=None):
    """One backtracking Euler step from ``u``.

    ``energy_u`` and ``a_u`` (``A(u)``) may be passed in to avoid recomputing.
    A rejected step returns ``u`` unchanged.
    """
    if tau < config.step_min:
        raise ValueError(f"tau {tau} below step_min {config.step_min}")
    u = np.asarray(u, dtype=float)
    e0 = problem.energy(u) if energy_u is None else energy_u
    rhs = (problem.apply_A(u) if a_u is None else a_u) - u
    while True:
        cand = u + tau * rhs
        with np.errstate(over="ignore", invalid="ignore"):
            e1 = problem.energy(cand)
        if math.isfinite(e1) and e1 <= e0:
            return StepResult(cand, True, tau, e1)
        if tau * config.shrink < config.step_min:
            return StepResult(u, False, tau, e0)
        tau *= config.shrink


class ConeMonitor:
    """Cone distances along a trajectory, warm-starting each projection."""

    def __init__(self, problem: Problem):
        self.structure = problem.structure
        self._act_p = None
        self._act_m = None

    def __call__(self, u):
        sp = project_onto_cone(self.structure, u, warm_active=self._act_p)
        sm = project_onto_cone(self.structure, -u, warm_active=self._act_m)
        self._act_p, self._act_m = sp.active, sm.active
        return norm(self.structure, sp.dual), norm(self.structure, sm.dual)


def integrate(problem: Problem, u0, config: FlowConfig, monitor: bool = False, alpha=None):
    """Run the flow from ``u0`` until an outcome test fires.

    With ``monitor=True`` the gram-norm distances to ``K`` and ``-K`` are
    recorded at every state and ``first_absorbed`` notes the first step at
    which one of them drops below ``alpha``.  ``alpha`` defaults to
    ``config.alpha * ||u0||``.
    """
    u = problem.grid.check_field(u0, "u0").copy()
    alpha = config.alpha * problem.norm(u) if alpha is None else alpha
    rec = TrajectoryRecord()
    cones = ConeMonitor(problem) if monitor else None
    e = problem.energy(u)
    step = 0
    tag = Tag.UNDETERMINED
    while True:
        nu = problem.norm(u)
        a_u = problem.apply_A(u)
        g = norm(problem.structure, u - a_u)
        rec.energies.append(e)
        rec.grad_norms.append(g)
        rec.norms.append(nu)
        if cones is not None:
            dp, dm = cones(u)
            if rec.first_absorbed is None and min(dp, dm) < alpha:
                rec.first_absorbed = (Label.PLUS if dp <= dm else Label.MINUS, step)
        else:
            dp = dm = math.nan
        rec.dist_plus.append(dp)
        rec.dist_minus.append(dm)
        if step % config.stride == 0:
            rec.states.append(u.copy())
            rec.state_steps.append(step)

        if nu <= config.tol_zero:
            tag = Tag.ZERO
        elif e < config.escape_energy:
            tag = Tag.ESCAPED
        elif g <= config.tol_crit * nu:
            tag = Tag.CRITICAL
        elif step >= config.max_steps:
            tag = Tag.UNDETERMINED
        else:
            res = flow_step(problem, u, config.step_init, config, energy_u=e, a_u=a_u)
            rec.step_sizes.append(res.tau_used if res.accepted else 0.0)
            step += 1
            if res.accepted:
                u, e = res.field, res.energy
            continue
        break
    if rec.state_steps[-1] != step:
        rec.states.append(u.copy())
        rec.state_steps.append(step)
    rec.steps_taken = step
    return Outcome(tag, u, e, g, nu, step), rec


def classify(problem: Problem, u0, config: FlowConfig) -> Outcome:
    """Outcome only; no cone monitoring."""
    return integrate(problem, u0, config)[0]


def verify_outcome(problem: Problem, outcome: Outcome, config: FlowConfig) -> bool:
    """Re-check the tag-specific invariant from the terminal field alone."""
    u = outcome.terminal
    nu = problem.norm(u)
    if outcome.tag is Tag.ZERO:
        return nu <= config.tol_zero
    if outcome.tag is Tag.ESCAPED:
        return problem.energy(u) <= config.escape_energy
    if outcome.tag is Tag.CRITICAL:
        g = problem.norm(problem.gradient(u))
        return g <= config.tol_crit * nu and nu > config.tol_zero
    return True


def absorption_label(record: TrajectoryRecord, alpha: float) -> Label:
    """Which cone neighbourhood the trajectory entered first, if any.

    Ties at the first dipping step go to the closer cone.
    """
    dp = np.asarray(record.dist_plus, dtype=float)
    dm = np.asarray(record.dist_minus, dtype=float)
    if dp.size and np.all(np.isnan(dp)):
        raise ValueError("record has no cone distances; integrate with monitor=True")
    hit = np.flatnonzero((dp < alpha) | (dm < alpha))
    if hit.size == 0:
        return Label.NEITHER
    k = hit[0]
    return Label.PLUS if dp[k] <= dm[k] else Label.MINUS


@dataclass(frozen=True)
class InvarianceProbe:
    """Growth of the distance to ``K`` along a trajectory that starts in ``K``."""

    initial: float
    max_excess: float
    tol: float

    @property
    def holds(self) -> bool:
        return self.max_excess <= self.tol


def invariance_probe(record: TrajectoryRecord, tol: float = TOL_POS, which: str = "K"):
    d = np.asarray(record.dist_plus if which == "K" else record.dist_minus, dtype=float)
    scale = max(record.norms) if record.norms else 1.0
    return InvarianceProbe(float(d[0]), float(np.max(d - d[0])), tol * scale)


@dataclass(frozen=True)
class PolishResult:
    field: np.ndarray
    residual: float
    iterations: int
    converged: bool


def fixed_point_residual(problem: Problem, u) -> float:
    """``||u - A(u)|| / ||u||`` in the gram norm."""
    nu = problem.norm(u)
    if nu == 0:
        return 0.0
    return problem.norm(problem.gradient(u)) / nu


def _jacobian_banded(problem: Problem, u) -> np.ndarray:
    """``gram - W diag(f'(u))`` in LAPACK (2, 2) general banded form."""
    ab_up = problem.structure.gram_banded
    n = u.size
    ab = np.zeros((5, n))
    ab[0, 2:] = ab_up[0, 2:]
    ab[1, 1:] = ab_up[1, 1:]
    ab[2] = ab_up[2] - problem.weights * problem.model.df(u)
    ab[3, :-1] = ab_up[1, 1:]
    ab[4, :-2] = ab_up[0, 2:]
    return ab


def polish_critical(problem: Problem, u, tol: float = 1e-12, max_iter: int = 30) -> PolishResult:
    """Damped Newton on ``gram u - W f(u) = 0`` (equivalently ``u = A(u)``).

    The Jacobian ``gram - W diag(f'(u))`` is assembled exactly and stays
    pentadiagonal.  Steps are halved until the fixed-point residual drops;
    if no step helps, the best iterate so far is returned unconverged.
    """
    u = np.asarray(u, dtype=float).copy()
    if not np.any(u):
        return PolishResult(u, 0.0, 0, True)
    res = fixed_point_residual(problem, u)
    it = 0
    while res > tol and it < max_iter:
        it += 1
        F = problem.structure.gram @ u - problem.weights * problem.model.f(u)
        try:
            du = solve_banded((2, 2), _jacobian_banded(problem, u), -F)
        except (np.linalg.LinAlgError, ValueError):
            break
        lam, improved = 1.0, False
        while lam >= 1.0 / 64:
            cand = u + lam * du
            r = fixed_point_residual(problem, cand)
            if math.isfinite(r) and r < res:
                u, res, improved = cand, r, True
                break
            lam *= 0.5
        if not improved:
            break
    return PolishResult(u, res, it, res <= tol)


def scaled_config(config: FlowConfig, scale: float) -> FlowConfig:
    """Copy of ``config`` with ``alpha`` set to ``config.alpha * scale``."""
    return replace(config, alpha=config.alpha * scale)
