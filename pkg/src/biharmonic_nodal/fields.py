"""Seed fields: compactly supported bumps and smooth random test fields."""

from __future__ import annotations

import numpy as np

from .radial_space import RadialGrid


def bump(grid: RadialGrid, radius: float, center: float = 0.0, power: int = 4) -> np.ndarray:
    """``(1 - ((r - center) / radius)^2)_+^power``; nonnegative and C^{power-1}."""
    x = (grid.radii - center) / radius
    return np.clip(1.0 - x * x, 0.0, None) ** power


def default_seeds(grid: RadialGrid) -> tuple[np.ndarray, np.ndarray]:
    """Positive seed centred at the origin and an independent negative seed.

    The positive seed is ``(1 - (r/R0)^2)_+^4`` with ``R0 = r_max / 4``.  The
    negative seed is a narrower shell bump centred at ``R0 / 2``, so the two
    are linearly independent.
    """
    r0 = grid.r_max / 4.0
    u_plus = bump(grid, r0)
    v_minus = -bump(grid, 0.75 * r0, center=0.5 * r0)
    return u_plus, v_minus


def random_field(grid: RadialGrid, rng, n_bumps: int = 4, reach: float = 0.5) -> np.ndarray:
    """Smooth random radial field vanishing at ``r_max``.

    Sum of Gaussians with normal amplitudes, centres uniform in
    ``[0, reach * r_max]`` and widths between 5% and 20% of ``r_max``.
    """
    r = grid.radii
    out = np.zeros(grid.n_nodes)
    for _ in range(n_bumps):
        c = rng.normal()
        m = rng.uniform(0.0, reach * grid.r_max)
        s = rng.uniform(0.05, 0.2) * grid.r_max
        out += c * np.exp(-(((r - m) / s) ** 2))
    out *= (1.0 - (r / grid.r_max) ** 2) ** 2
    return out


def random_load(grid: RadialGrid, rng) -> np.ndarray:
    """Nonnegative, not identically zero load built from random bumps."""
    r = grid.radii
    out = np.zeros(grid.n_nodes)
    for _ in range(rng.integers(1, 4)):
        c = rng.uniform(0.1, 1.0)
        m = rng.uniform(0.0, 0.5 * grid.r_max)
        s = rng.uniform(0.02, 0.15) * grid.r_max
        out += c * bump(grid, s, center=m, power=2)
    if not np.any(out > 0):
        out[0] = 1.0
    return out
