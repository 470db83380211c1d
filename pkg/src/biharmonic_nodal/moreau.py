"""Moreau decomposition ``u = Pu + P*u`` for the cone of nonnegative fields.

``Pu`` minimises ``<w - u, w - u>`` over ``w >= 0`` in the gram metric.  The
quadratic program is solved with a primal-dual active-set iteration on the
bound constraints, falling back to a classic primal active-set method when the
primal-dual iteration cycles.  Both keep the gram matrix banded: deleting rows
and columns from a pentadiagonal matrix leaves it pentadiagonal.

The multipliers ``lam = gram @ (Pu - u)`` certify optimality: ``lam >= 0`` and
``lam_i * (Pu)_i = 0``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .radial_space import TOL_POS, SobolevStructure, inner, norm

log = logging.getLogger(__name__)

TOL_QP = 1e-10
TOL_QP_FLOOR = 1e-14


class ProjectionError(RuntimeError):
    """The QP iteration budget ran out before the KKT certificate held."""

    def __init__(self, message, split=None):
        super().__init__(message)
        self.split = split


@dataclass(frozen=True)
class MoreauSplit:
    positive: np.ndarray
    dual: np.ndarray
    multipliers: np.ndarray = field(repr=False)
    orth_residual: float
    kkt_violation: float
    compl_violation: float
    kkt_scaled: float
    compl_scaled: float
    active: np.ndarray = field(repr=False)
    iterations: int = 0
    method: str = "pdas"


def _banded_matvec(ab: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``G @ x`` for symmetric ``G`` stored in LAPACK upper banded form."""
    bw = ab.shape[0] - 1
    y = ab[bw] * x
    for k in range(1, bw + 1):
        d = ab[bw - k, k:]
        y[:-k] += d * x[k:]
        y[k:] += d * x[:-k]
    return y


def _sub_banded(ab: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Upper banded form of ``G[idx][:, idx]`` for sorted ``idx``."""
    bw = ab.shape[0] - 1
    m = idx.size
    sub = np.zeros((bw + 1, m))
    sub[bw] = ab[bw, idx]
    for k in range(1, min(bw, m - 1) + 1):
        i, j = idx[:-k], idx[k:]
        gap = j - i
        ok = gap <= bw
        vals = np.zeros(m - k)
        vals[ok] = ab[bw - gap[ok], j[ok]]
        sub[bw - k, k:] = vals
    return sub


def _solve_free(ab, b, free):
    """Minimiser of the QP restricted to ``w[~free] = 0``."""
    w = np.zeros_like(b)
    idx = np.flatnonzero(free)
    if idx.size:
        sub = _sub_banded(ab, idx)
        c = cholesky_banded(sub, lower=False)
        x = cho_solve_banded((c, False), b[idx])
        x += cho_solve_banded((c, False), b[idx] - _banded_matvec(sub, x))
        w[idx] = x
    return w


def _pdas(ab, u, b, active, max_iter, eps_w, eps_lam):
    """Primal-dual active set (semismooth Newton) with sign tolerances.

    Returns ``(None, active, it)`` when the active set repeats or the
    iteration budget runs out.
    """
    seen = set()
    w = None
    for it in range(1, max_iter + 1):
        w = _solve_free(ab, b, ~active)
        lam = _banded_matvec(ab, w) - b
        new_active = np.where(active, lam >= -eps_lam, w < -eps_w)
        if np.array_equal(new_active, active):
            return w, active, it
        key = new_active.tobytes()
        if key in seen:
            return None, active, it
        seen.add(key)
        active = new_active
    return None, active, max_iter


def _primal_active_set(ab, b, max_iter, eps_w, eps_lam, w0=None):
    """Feasible primal active-set method; finite termination.

    Starts from ``w0`` clipped to the cone (zero when omitted) with the
    working set made of its zero entries.
    """
    n = b.size
    w = np.zeros(n) if w0 is None else np.maximum(w0, 0.0)
    working = w <= 0.0
    w[working] = 0.0
    for it in range(1, max_iter + 1):
        target = _solve_free(ab, b, ~working)
        step = target - w
        if np.all(np.abs(step) <= eps_w):
            lam = _banded_matvec(ab, w) - b
            cand = np.where(working, lam, np.inf)
            j = int(np.argmin(cand / eps_lam))
            if cand[j] >= -eps_lam[j]:
                return w, working, it
            working[j] = False
            continue
        decreasing = (~working) & (step < 0)
        alpha, block = 1.0, -1
        if np.any(decreasing):
            ratios = np.full(n, np.inf)
            ratios[decreasing] = -w[decreasing] / step[decreasing]
            block = int(np.argmin(ratios))
            alpha = min(1.0, ratios[block])
        w = w + alpha * step
        if alpha < 1.0:
            w[block] = 0.0
            working[block] = True
        w[working] = 0.0
    return w, working, max_iter


def _assemble_split(structure, u, w, active, it, method, ab, use_structure):
    """Build the split and its KKT diagnostics.

    Raw multipliers span many decades because the radial weights grow like
    ``r^{N-1}``, so the certificate uses scaled versions: node ``i`` is
    measured against ``sqrt(G_ii)`` and everything is relative to ``||u||``
    (``||u||^2`` for complementarity and orthogonality).
    """
    w = np.where(active | (w < 0.0), 0.0, w)
    dual = u - w
    if use_structure:
        lam = structure.gram @ (w - u)
        orth = abs(inner(structure, w, dual))
    else:
        lam = _banded_matvec(ab, w - u)
        orth = abs(float(np.dot(w, _banded_matvec(ab, dual))))
    unorm2 = max(float(np.dot(u, _banded_matvec(ab, u))), TOL_QP_FLOOR**2)
    unorm = np.sqrt(unorm2)
    return MoreauSplit(
        positive=w,
        dual=dual,
        multipliers=lam,
        orth_residual=orth,
        kkt_violation=float(max(np.max(-lam), 0.0)),
        compl_violation=float(np.max(np.abs(lam * w))),
        kkt_scaled=float(max(np.max(-lam / np.sqrt(ab[-1])), 0.0)) / unorm,
        compl_scaled=float(np.max(np.abs(lam * w))) / unorm2,
        active=active,
        iterations=it,
        method=method,
    )


def project_onto_cone(
    structure: SobolevStructure,
    u,
    tol_qp: float = TOL_QP,
    warm_active=None,
    max_iter: int | None = None,
    gram_banded: np.ndarray | None = None,
) -> MoreauSplit:
    """Gram-metric projection of ``u`` onto ``{w >= 0}``.

    ``warm_active`` seeds the active set (for example from the previous state
    of a trajectory).  ``gram_banded`` replaces the gram matrix, which is how
    the Euclidean special case is exercised in tests.
    """
    u = np.asarray(u, dtype=float)
    if tol_qp <= 0:
        raise ValueError("tol_qp must be positive")
    use_structure = gram_banded is None
    ab = structure.gram_banded if use_structure else gram_banded
    n = u.size
    max_iter = max_iter or 4 * n + 20
    if not np.any(u < 0):
        active = np.zeros(n, dtype=bool)
        return _assemble_split(structure, u, u.copy(), active, 0, "trivial", ab, use_structure)
    b = _banded_matvec(ab, u)
    diag_sqrt = np.sqrt(ab[-1])
    unorm = float(np.sqrt(max(np.dot(u, b), 0.0)))
    eps_w = 1e-13 * unorm / diag_sqrt
    eps_lam = 1e-13 * unorm * diag_sqrt
    active = (u <= 0) if warm_active is None else np.asarray(warm_active, dtype=bool).copy()
    w, active, it = _pdas(ab, u, b, active, min(max_iter, 60), eps_w, eps_lam)
    method = "pdas"
    if w is None:
        log.debug("primal-dual active set cycled after %d iterations; falling back", it)
        w0 = _solve_free(ab, b, ~active)
        w, active, it2 = _primal_active_set(ab, b, max_iter, eps_w, eps_lam, w0)
        it += it2
        method = "primal"
    split = _assemble_split(structure, u, w, active, it, method, ab, use_structure)
    if split.kkt_scaled > tol_qp or split.compl_scaled > tol_qp:
        raise ProjectionError(
            f"no KKT certificate after {it} iterations ({method}): "
            f"scaled kkt={split.kkt_scaled:.3e} compl={split.compl_scaled:.3e}",
            split,
        )
    return split


def project_onto_negative_cone(structure, u, tol_qp: float = TOL_QP, **kw) -> MoreauSplit:
    """Projection onto ``{w <= 0}`` via ``Qu = -P(-u)``.

    In the returned split ``positive`` holds ``Qu`` (the cone part) and
    ``dual`` holds ``Q*u = u - Qu``.
    """
    u = np.asarray(u, dtype=float)
    s = project_onto_cone(structure, -u, tol_qp, **kw)
    return replace(s, positive=-s.positive, dual=-s.dual, multipliers=-s.multipliers)


def cone_distance(structure, u, which: str = "K", tol_qp: float = TOL_QP, **kw) -> float:
    """Gram-norm distance from ``u`` to ``K`` (``which="K"``) or ``-K`` (``"-K"``)."""
    if which == "K":
        split = project_onto_cone(structure, u, tol_qp, **kw)
    elif which == "-K":
        split = project_onto_negative_cone(structure, u, tol_qp, **kw)
    else:
        raise ValueError(f"which must be 'K' or '-K', got {which!r}")
    return norm(structure, split.dual)


@dataclass(frozen=True)
class DualSignReport:
    max_dual: float
    scale: float
    nonpositive: bool


def check_dual_sign(split: MoreauSplit, tol_pos: float = TOL_POS) -> DualSignReport:
    """Is ``P*u <= 0`` nodewise (the discrete face of ``K* in -K``)?"""
    u = split.positive + split.dual
    scale = float(np.max(np.abs(u))) if u.size else 0.0
    mx = float(np.max(split.dual)) if u.size else 0.0
    return DualSignReport(mx, scale, bool(mx <= tol_pos * scale))


@dataclass(frozen=True)
class OrderReport:
    """Worst violations of ``u+ <= Pu``, ``P*u <= u-``, ``Qu <= u-``, ``u+ <= Q*u``."""

    plus_below_p: float
    pstar_below_minus: float
    q_below_minus: float
    plus_below_qstar: float
    scale: float
    tol_pos: float

    @property
    def worst(self) -> float:
        return max(self.plus_below_p, self.pstar_below_minus, self.q_below_minus, self.plus_below_qstar)

    @property
    def holds(self) -> bool:
        return self.worst <= self.tol_pos * self.scale


def remark_order_check(structure, u, tol_pos: float = TOL_POS, tol_qp: float = TOL_QP) -> OrderReport:
    u = np.asarray(u, dtype=float)
    p = project_onto_cone(structure, u, tol_qp)
    q = project_onto_negative_cone(structure, u, tol_qp)
    up, um = np.maximum(u, 0.0), np.minimum(u, 0.0)

    def worst(x):
        return float(max(np.max(x), 0.0))

    return OrderReport(
        worst(up - p.positive),
        worst(p.dual - um),
        worst(q.positive - um),
        worst(up - q.dual),
        float(np.max(np.abs(u))),
        tol_pos,
    )


def enumerate_projection(gram: np.ndarray, fields: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Exhaustive active-set oracle for small ``n``.

    Every free set ``F`` is tried: ``w_F = G_FF^{-1} (G u)_F``, ``w = 0`` elsewhere.
    The feasible KKT point (``w_F >= 0`` and multipliers ``>= 0`` on the
    complement) with least objective is returned.  ``fields`` has one field
    per row; all rows are processed against each pattern at once.
    """
    gram = np.asarray(gram, dtype=float)
    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    n = gram.shape[0]
    if n > 16:
        raise ValueError(f"enumeration over 2^{n} patterns refused")
    B = gram @ fields.T
    best = np.zeros_like(fields.T)
    best_obj = np.full(fields.shape[0], np.inf)
    scale_b = np.max(np.abs(B), axis=0) + TOL_QP_FLOOR
    scale_u = np.max(np.abs(fields), axis=1) + TOL_QP_FLOOR
    for mask in itertools.product((False, True), repeat=n):
        free = np.array(mask)
        W = np.zeros_like(B)
        if free.any():
            W[free] = np.linalg.solve(gram[np.ix_(free, free)], B[free])
        lam = gram @ W - B
        feas = np.all(W[free] >= -tol * scale_u, axis=0) & np.all(
            lam[~free] >= -tol * scale_b, axis=0
        )
        obj = 0.5 * np.einsum("ij,ij->j", W, gram @ W) - np.einsum("ij,ij->j", W, B)
        take = feas & (obj < best_obj)
        best[:, take] = W[:, take]
        best_obj[take] = obj[take]
    if np.any(~np.isfinite(best_obj)):
        raise RuntimeError("enumeration found no KKT point")
    return np.maximum(best.T, 0.0)
