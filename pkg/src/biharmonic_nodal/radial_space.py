"""Radial finite-difference discretization of H^2_rad(R^N).

Radial fields live on the interior nodes ``r_i = i * h`` (``i = 1..n``) of a
truncated interval ``(0, r_max)``.  The field vanishes at ``r_max`` and is even
about the origin.  Integrals over ``R^N`` reduce to weighted sums with weights
``|S^{N-1}| r^{N-1} h``.

The inner product ``<u, v> = int(Lap u Lap v + V u v)`` is assembled weakly as
``L^T W L + W diag(V)`` which keeps the bilaplacian part symmetric positive
semidefinite by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import cho_solve_banded, cholesky_banded
from scipy.special import gammaln

MIN_DIM = 5
MIN_NODES = 4
TOL_POS = 1e-8


class DiscretizationError(ValueError):
    """Raised for invalid grids or a gram matrix that fails to factor."""


@dataclass(frozen=True)
class RadialGrid:
    """Uniform interior mesh of ``(0, r_max)`` for radial fields in ``R^N``."""

    dim_n: int
    r_max: float
    n_nodes: int
    spacing: float
    radii: np.ndarray = field(repr=False)
    sphere_area: float

    @property
    def critical_exponent(self) -> float:
        """``2_* = 2N / (N - 4)``."""
        return 2.0 * self.dim_n / (self.dim_n - 4)

    @property
    def max_power(self) -> float:
        """Supremum of admissible exponents ``p`` in ``|s|^p s``."""
        return self.critical_exponent - 2.0

    def check_field(self, u, name="field") -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_nodes,):
            raise ValueError(
                f"{name} has shape {u.shape}, expected ({self.n_nodes},)"
            )
        if not np.all(np.isfinite(u)):
            raise ValueError(f"{name} has non-finite entries")
        return u


def sphere_area(dim_n: int) -> float:
    """Surface measure of the unit sphere in ``R^N``: ``2 pi^{N/2} / Gamma(N/2)``."""
    return float(2.0 * np.exp(0.5 * dim_n * np.log(np.pi) - gammaln(0.5 * dim_n)))


def build_grid(dim_n: int, r_max: float, n_nodes: int) -> RadialGrid:
    if int(dim_n) != dim_n or dim_n < MIN_DIM:
        raise DiscretizationError(
            f"dim_n must be an integer >= {MIN_DIM} (got {dim_n}); "
            "the critical exponent 2N/(N-4) needs N > 4"
        )
    if not np.isfinite(r_max) or r_max <= 0:
        raise DiscretizationError(f"r_max must be positive, got {r_max}")
    if int(n_nodes) != n_nodes or n_nodes < MIN_NODES:
        raise DiscretizationError(f"n_nodes must be an integer >= {MIN_NODES}, got {n_nodes}")
    dim_n, n_nodes, r_max = int(dim_n), int(n_nodes), float(r_max)
    spacing = r_max / (n_nodes + 1)
    radii = spacing * np.arange(1, n_nodes + 1, dtype=float)
    radii.setflags(write=False)
    return RadialGrid(dim_n, r_max, n_nodes, spacing, radii, sphere_area(dim_n))


def assemble_quadrature(grid: RadialGrid) -> np.ndarray:
    """Trapezoid weights for ``int_{B_{r_max}} g dx`` on the interior nodes.

    The origin carries zero weight in the trapezoid rule (``r^{N-1} = 0``).  The
    half weight of the boundary node ``r_max`` is lumped onto the last interior
    node, so ``sum(w)`` is exactly the composite trapezoid rule for the ball
    volume and stays second order.
    """
    h = grid.spacing
    w = grid.sphere_area * grid.radii ** (grid.dim_n - 1) * h
    w[-1] += 0.5 * grid.sphere_area * grid.r_max ** (grid.dim_n - 1) * h
    w.setflags(write=False)
    return w


def ball_volume(dim_n: int, radius: float) -> float:
    return sphere_area(dim_n) * radius**dim_n / dim_n


def integrate(weights: np.ndarray, g) -> float:
    return float(np.dot(weights, g))


def assemble_laplacian(grid: RadialGrid) -> sparse.csr_matrix:
    """Centered stencil for ``u'' + (N-1) u' / r`` on the interior nodes.

    ``u(r_max) = 0`` closes the last row.  The first row eliminates ``u(0)``
    through the even quadratic fit ``u(0) = (4 u_1 - u_2) / 3`` implied by
    ``u'(0) = 0``, which leaves the row exact on ``1`` and ``r^2``.
    """
    n, h, dim = grid.n_nodes, grid.spacing, grid.dim_n
    r = grid.radii
    c = (dim - 1) / (2.0 * h * r)
    lower = 1.0 / h**2 - c
    main = np.full(n, -2.0 / h**2)
    upper = 1.0 / h**2 + c
    # row 0: (2N/3)(u_2 - u_1)/h^2
    main[0] = -2.0 * dim / (3.0 * h**2)
    upper[0] = 2.0 * dim / (3.0 * h**2)
    lap = sparse.diags(
        [lower[1:], main, upper[:-1]], offsets=[-1, 0, 1], shape=(n, n), format="csr"
    )
    return lap


@dataclass(frozen=True)
class SobolevStructure:
    """Discrete H^2_rad geometry: Laplacian, potential, gram matrix and its Cholesky factor."""

    grid: RadialGrid
    weights: np.ndarray = field(repr=False)
    laplacian: sparse.csr_matrix = field(repr=False)
    potential: np.ndarray = field(repr=False)
    gram: sparse.csr_matrix = field(repr=False)
    gram_banded: np.ndarray = field(repr=False)
    factor: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.grid.n_nodes

    def matvec(self, u: np.ndarray) -> np.ndarray:
        return self.gram @ u

    def dense_gram(self) -> np.ndarray:
        return self.gram.toarray()


BANDWIDTH = 2


def _to_upper_banded(mat: sparse.spmatrix, bw: int) -> np.ndarray:
    n = mat.shape[0]
    ab = np.zeros((bw + 1, n))
    for k in range(bw + 1):
        ab[bw - k, k:] = mat.diagonal(k)
    return ab


def assemble_gram(grid, laplacian, weights, potential) -> SobolevStructure:
    potential = np.asarray(potential, dtype=float)
    if potential.shape == ():
        potential = np.full(grid.n_nodes, float(potential))
    if potential.shape != (grid.n_nodes,):
        raise DiscretizationError(
            f"potential has shape {potential.shape}, expected ({grid.n_nodes},)"
        )
    if not np.all(np.isfinite(potential)) or np.min(potential) <= 0:
        raise DiscretizationError("potential must be finite and bounded below by V0 > 0")
    W = sparse.diags(weights)
    gram = (laplacian.T @ W @ laplacian + sparse.diags(weights * potential)).tocsr()
    gram = (0.5 * (gram + gram.T)).tocsr()
    ab = _to_upper_banded(gram, BANDWIDTH)
    try:
        factor = cholesky_banded(ab, lower=False)
    except np.linalg.LinAlgError as exc:
        raise DiscretizationError(
            f"gram matrix is not positive definite on {grid}: {exc}"
        ) from exc
    for arr in (ab, factor, potential):
        arr.setflags(write=False)
    return SobolevStructure(grid, weights, laplacian, potential, gram, ab, factor)


def build_structure(grid: RadialGrid, potential) -> SobolevStructure:
    """Assemble quadrature, Laplacian and gram matrix in one call."""
    weights = assemble_quadrature(grid)
    lap = assemble_laplacian(grid)
    if callable(potential):
        potential = potential(grid.radii)
    return assemble_gram(grid, lap, weights, potential)


def inner(structure: SobolevStructure, u, v) -> float:
    """``<u, v> = sum w (Lu)(Lv) + sum w V u v``."""
    u = structure.grid.check_field(u, "u")
    v = structure.grid.check_field(v, "v")
    lap = structure.laplacian
    w = structure.weights
    return float(np.dot(w * (lap @ u), lap @ v) + np.dot(w * structure.potential * u, v))


def norm(structure: SobolevStructure, u) -> float:
    u = structure.grid.check_field(u, "u")
    lu = structure.laplacian @ u
    w = structure.weights
    return float(np.sqrt(np.dot(w, lu * lu) + np.dot(w * structure.potential, u * u)))


def solve_gram(structure: SobolevStructure, rhs) -> np.ndarray:
    """Solve ``gram @ x = rhs`` with the banded Cholesky factor.

    One step of iterative refinement keeps the relative residual near
    machine precision even for the badly scaled radial weights.
    """
    rhs = np.asarray(rhs, dtype=float)
    x = cho_solve_banded((structure.factor, False), rhs)
    r = rhs - structure.gram @ x
    x = x + cho_solve_banded((structure.factor, False), r)
    return x


@dataclass(frozen=True)
class PositivityReport:
    min_value: float
    max_value: float
    positive: bool
    tol_pos: float

    @property
    def relative_min(self) -> float:
        return self.min_value / self.max_value if self.max_value > 0 else -np.inf


def positivity_report(v: np.ndarray, tol_pos: float = TOL_POS) -> PositivityReport:
    vmin, vmax = float(np.min(v)), float(np.max(v))
    return PositivityReport(vmin, vmax, bool(vmax > 0 and vmin >= -tol_pos * vmax), tol_pos)


def solve_linear_positivity(structure, weights, h, tol_pos: float = TOL_POS):
    """Solve the discrete weak form of ``Lap^2 v + V v = h`` for a load ``h >= 0``.

    Returns the solution and a :class:`PositivityReport`.
    """
    h = structure.grid.check_field(h, "h")
    if np.any(h < 0):
        raise ValueError("load h must be componentwise nonnegative")
    if not np.any(h > 0):
        raise ValueError("load h must not vanish identically")
    v = solve_gram(structure, weights * h)
    return v, positivity_report(v, tol_pos)
