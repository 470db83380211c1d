"""Power-type nonlinearity, energy functional and the operator ``A``.

The nonlinearity is ``f(r, s) = sum_i a_i(r) |s|^{p_i} s`` with ``a_i >= 0`` and
``0 < p_i < 2_* - 2``.  Its antiderivative is ``F = sum_i a_i |s|^{p_i+2} / (p_i+2)``.

``A(u)`` is the gram-metric representative of ``v -> int f(r, u) v``, so the
gradient of ``I(u) = ||u||^2 / 2 - int F(r, u)`` is ``u - A(u)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fields import random_field
from .radial_space import (
    RadialGrid,
    SobolevStructure,
    build_grid,
    build_structure,
    norm,
    solve_gram,
)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class PowerTerm:
    coef: np.ndarray
    exponent: float


@dataclass(frozen=True)
class NonlinearityModel:
    """``f(r, s) = sum a_i(r) |s|^{p_i} s`` tabulated on a grid."""

    terms: tuple[PowerTerm, ...]

    @classmethod
    def from_terms(cls, grid: RadialGrid, terms: Sequence[tuple]) -> "NonlinearityModel":
        """Build from ``(coef, exponent)`` pairs; ``coef`` is a scalar, an array or a callable of r."""
        if not terms:
            raise ModelError("at least one power term is required")
        built = []
        for k, (coef, p) in enumerate(terms):
            if callable(coef):
                coef = coef(grid.radii)
            coef = np.broadcast_to(np.asarray(coef, dtype=float), (grid.n_nodes,)).copy()
            p = float(p)
            if not 0.0 < p < grid.max_power:
                raise ModelError(
                    f"term {k}: exponent {p} outside (0, 2_* - 2) = (0, {grid.max_power:g})"
                )
            if not np.all(np.isfinite(coef)) or np.any(coef < 0):
                raise ModelError(f"term {k}: coefficients must be finite and nonnegative")
            if not np.any(coef > 0):
                raise ModelError(f"term {k}: coefficient vanishes identically")
            coef.setflags(write=False)
            built.append(PowerTerm(coef, p))
        return cls(tuple(built))

    @property
    def max_exponent(self) -> float:
        return max(t.exponent for t in self.terms)

    def f(self, u: np.ndarray) -> np.ndarray:
        """Nodewise ``f(r_j, u_j)``."""
        au = np.abs(u)
        out = np.zeros_like(u, dtype=float)
        for t in self.terms:
            out += t.coef * au**t.exponent * u
        return out

    def big_f(self, u: np.ndarray) -> np.ndarray:
        au = np.abs(u)
        out = np.zeros_like(u, dtype=float)
        for t in self.terms:
            out += t.coef * au ** (t.exponent + 2.0) / (t.exponent + 2.0)
        return out

    def df(self, u: np.ndarray) -> np.ndarray:
        """Nodewise ``d f / d s``."""
        au = np.abs(u)
        out = np.zeros_like(u, dtype=float)
        for t in self.terms:
            out += (t.exponent + 1.0) * t.coef * au**t.exponent
        return out


def f_eval(model: NonlinearityModel, s: float, node: int) -> float:
    return float(sum(t.coef[node] * abs(s) ** t.exponent * s for t in model.terms))


def big_f_eval(model: NonlinearityModel, s: float, node: int) -> float:
    return float(
        sum(t.coef[node] * abs(s) ** (t.exponent + 2) / (t.exponent + 2) for t in model.terms)
    )


@dataclass(frozen=True)
class EnergyReport:
    quadratic: float
    potential_term: float
    total: float
    grad_norm: float


def energy_value(structure: SobolevStructure, weights, model, u) -> float:
    """``I(u)`` without the gradient; the hot path of the flow."""
    lu = structure.laplacian @ u
    quad = 0.5 * (np.dot(weights, lu * lu) + np.dot(weights * structure.potential, u * u))
    return float(quad - np.dot(weights, model.big_f(u)))


def energy(structure, weights, model, u) -> EnergyReport:
    u = structure.grid.check_field(u, "u")
    quadratic = 0.5 * norm(structure, u) ** 2
    potential_term = float(np.dot(weights, model.big_f(u)))
    total = quadratic - potential_term
    if not np.isfinite(total):
        raise FloatingPointError("energy is not finite; the field has blown up")
    grad_norm = norm(structure, gradient(structure, weights, model, u))
    return EnergyReport(quadratic, potential_term, total, grad_norm)


def apply_A(structure, weights, model, u) -> np.ndarray:
    return solve_gram(structure, weights * model.f(np.asarray(u, dtype=float)))


def gradient(structure, weights, model, u) -> np.ndarray:
    """Gram-metric gradient ``u - A(u)`` of the energy."""
    u = np.asarray(u, dtype=float)
    return u - apply_A(structure, weights, model, u)


@dataclass(frozen=True)
class GrowthBoundReport:
    """Empirical constants in ``|<A u, v>| <= (eps ||u|| + C ||u||^{p+1}) ||v||``."""

    eps: float
    const: float
    exponent: float
    max_ratio_fit: float
    holds_on_validation: bool
    max_excess_validation: float


def growth_bound_check(structure, weights, model, samples: int, rng=None, eps: float = 0.5):
    """Fit the growth constant on random fields and re-check it on fresh pairs.

    For a fixed ``u`` the worst ``v`` gives ``sup_v |<A u, v>| / ||v|| = ||A u||``,
    so the constant is fitted from ``(||A u|| - eps ||u||) / ||u||^{p+1}`` over
    random ``u`` of varying amplitude and inflated by a factor of two.  The
    validation pass evaluates ``|int f(u) v|`` on independent ``(u, v)`` pairs.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(rng)
    grid = structure.grid
    p = model.max_exponent

    def sample_u():
        return random_field(grid, rng) * 10.0 ** rng.uniform(-2, 1)

    fit = np.empty(samples)
    for j in range(samples):
        u = sample_u()
        nu = norm(structure, u)
        fit[j] = max(norm(structure, apply_A(structure, weights, model, u)) - eps * nu, 0.0)
        fit[j] /= nu ** (p + 1)
    const = 2.0 * float(fit.max())

    excess = np.empty(samples)
    for j in range(samples):
        u, v = sample_u(), random_field(grid, rng)
        lhs = abs(np.dot(weights * model.f(u), v))
        nu, nv = norm(structure, u), norm(structure, v)
        excess[j] = lhs - (eps * nu + const * nu ** (p + 1)) * nv
    return GrowthBoundReport(
        eps, const, p, float(fit.max()), bool(excess.max() <= 0), float(excess.max())
    )


@dataclass(frozen=True)
class Problem:
    """Discretized problem: grid, H^2_rad structure and nonlinearity."""

    structure: SobolevStructure
    model: NonlinearityModel

    @property
    def grid(self) -> RadialGrid:
        return self.structure.grid

    @property
    def weights(self) -> np.ndarray:
        return self.structure.weights

    def norm(self, u) -> float:
        return norm(self.structure, u)

    def energy(self, u) -> float:
        return energy_value(self.structure, self.weights, self.model, u)

    def apply_A(self, u) -> np.ndarray:
        return apply_A(self.structure, self.weights, self.model, u)

    def gradient(self, u) -> np.ndarray:
        return gradient(self.structure, self.weights, self.model, u)


def build_problem(dim_n=5, r_max=20.0, n_nodes=400, potential=1.0, terms=((1.0, 2.0),)) -> Problem:
    """Assemble a problem; the defaults are the reference cubic problem in R^5."""
    grid = build_grid(dim_n, r_max, n_nodes)
    structure = build_structure(grid, potential)
    return Problem(structure, NonlinearityModel.from_terms(grid, terms))
