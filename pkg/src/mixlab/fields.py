"""Grid functions: spatial slices, space-time fields, discrete gradients.

Gradients are forward differences with one-sided stencils at the box boundary,
so every quantity below is exactly computable from cell values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridDomain


def gradient_components(grid: GridDomain, flat_values):
    """Per-axis forward-difference gradient, flat arrays (value/length units)."""
    u = np.asarray(flat_values, dtype=float).reshape(grid.shape)
    comps = []
    for axis in range(grid.dim):
        h = grid.cell_size[axis]
        d = np.diff(u, axis=axis) / h
        last = np.take(d, [-1], axis=axis)
        comps.append(np.concatenate([d, last], axis=axis).ravel())
    return comps


def grad_norm_sq(grid: GridDomain, flat_values):
    comps = gradient_components(grid, flat_values)
    out = np.zeros(grid.ncells)
    for c in comps:
        out += c * c
    return out


@dataclass
class GradientField:
    """Per-axis forward-difference gradient of one spatial slice."""

    grid: GridDomain
    components: list

    @classmethod
    def of(cls, grid, flat_values):
        return cls(grid, gradient_components(grid, flat_values))

    def norm_sq(self):
        out = np.zeros(self.grid.ncells)
        for c in self.components:
            out += c * c
        return out


@dataclass
class SpatialField:
    """One spatial slice; `hypothesis` records which side condition it satisfies
    ('support' = compactly supported in the ball, 'zero_mean' = weighted mean 0)."""

    grid: GridDomain
    values: np.ndarray
    hypothesis: str = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.ncells:
            raise ValueError("values do not match grid")

    def grad_norm_sq(self):
        return grad_norm_sq(self.grid, self.values)

    def gradient(self):
        return gradient_components(self.grid, self.values)


@dataclass
class SpaceTimeField:
    """u[cell, level] on the grid's space-time lattice."""

    grid: GridDomain
    values: np.ndarray   # (ncells, n_levels)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.ncells, self.grid.n_levels):
            raise ValueError("values must be (ncells, n_levels)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite entries")

    def slice(self, level):
        return self.values[:, level]

    def at(self, point, t):
        """Nearest-cell, nearest-level point value (no interpolation)."""
        return float(self.values[self.grid.nearest_cell(point), self.grid.nearest_level(t)])

    def scaled(self, c):
        return SpaceTimeField(self.grid, c * self.values)

    def shifted(self, c):
        return SpaceTimeField(self.grid, self.values + c)

    def time_reversed(self):
        return SpaceTimeField(self.grid, self.values[:, ::-1])
