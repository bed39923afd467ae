"""Uniform rectangular grids on 1D/2D boxes with a time axis.

All measures in the package are midpoint-rule quadratures over cell centers:
a cell belongs to a ball iff its center does.  Time windows (a, b) map to the
discrete steps ``ceil(a/dt) .. floor(b/dt)`` (half-open windows rounded inward).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BallEscapesDomain, EmptyFamily

_EPS = 1e-9


@dataclass(frozen=True)
class GridDomain:
    """Uniform grid on a box, plus a uniform time axis (0, T]."""

    dim: int
    origin: tuple
    extent: tuple
    shape: tuple          # cells per axis
    time_steps: int = 1   # number of dt intervals; levels are 0..time_steps
    dt: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if len(self.origin) != self.dim or len(self.extent) != self.dim or len(self.shape) != self.dim:
            raise ValueError("origin/extent/shape must match dim")
        if any(e <= 0 for e in self.extent):
            raise ValueError("extent must be strictly positive per axis")
        if any(n <= 0 for n in self.shape):
            raise ValueError("shape must be positive")
        if self.dt <= 0 or self.time_steps <= 0:
            raise ValueError("dt and time_steps must be positive")

    # ---- static geometry ------------------------------------------------
    @property
    def cell_size(self):
        return tuple(e / n for e, n in zip(self.extent, self.shape))

    @property
    def cell_measure(self):
        m = 1.0
        for h in self.cell_size:
            m *= h
        return m

    @property
    def ncells(self):
        n = 1
        for s in self.shape:
            n *= s
        return n

    @property
    def n_levels(self):
        return self.time_steps + 1

    @property
    def T(self):
        return self.time_steps * self.dt

    def axis_centers(self, axis):
        h = self.cell_size[axis]
        return self.origin[axis] + h * (np.arange(self.shape[axis]) + 0.5)

    def centers(self):
        """(ncells, dim) array of cell centers, row-major over axes."""
        if self.dim == 1:
            return self.axis_centers(0)[:, None]
        X, Y = np.meshgrid(self.axis_centers(0), self.axis_centers(1), indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def times(self):
        return self.dt * np.arange(self.n_levels)

    def reshape(self, flat):
        return np.asarray(flat).reshape(self.shape)

    # ---- balls -----------------------------------------------------------
    def ball_mask(self, center, radius):
        """Boolean mask of cells whose center lies within Euclidean distance radius."""
        c = np.atleast_1d(np.asarray(center, dtype=float))
        d2 = np.sum((self.centers() - c[None, :]) ** 2, axis=1)
        return d2 < radius**2 - _EPS * radius**2

    def ball_inside(self, center, radius):
        """True when the geometric ball sits inside the bounding box."""
        c = np.atleast_1d(np.asarray(center, dtype=float))
        for a in range(self.dim):
            if c[a] - radius < self.origin[a] - _EPS or c[a] + radius > self.origin[a] + self.extent[a] + _EPS:
                return False
        return True

    # ---- faces (pairs of adjacent cells) ----------------------------------
    def interior_faces(self):
        """Per axis: (ia, ib, midpoints) index arrays of face-adjacent cell pairs."""
        out = []
        cent = self.centers()
        if self.dim == 1:
            n = self.shape[0]
            ia = np.arange(n - 1)
            ib = ia + 1
            mid = 0.5 * (cent[ia] + cent[ib])
            out.append((ia, ib, mid))
        else:
            nx, ny = self.shape
            idx = np.arange(nx * ny).reshape(nx, ny)
            ia = idx[:-1, :].ravel()
            ib = idx[1:, :].ravel()
            out.append((ia, ib, 0.5 * (cent[ia] + cent[ib])))
            ia = idx[:, :-1].ravel()
            ib = idx[:, 1:].ravel()
            out.append((ia, ib, 0.5 * (cent[ia] + cent[ib])))
        return out

    def boundary_cells(self):
        """Per axis and side: flat indices of cells touching the box boundary."""
        out = []
        if self.dim == 1:
            idx = np.arange(self.shape[0])
            out.append((0, 0, idx[:1]))
            out.append((0, 1, idx[-1:]))
        else:
            nx, ny = self.shape
            idx = np.arange(nx * ny).reshape(nx, ny)
            out.append((0, 0, idx[0, :]))
            out.append((0, 1, idx[-1, :]))
            out.append((1, 0, idx[:, 0]))
            out.append((1, 1, idx[:, -1]))
        return out

    # ---- time windows -----------------------------------------------------
    def window_steps(self, a, b):
        """Discrete levels n with t_n in the window (a, b), rounded inward."""
        lo = max(0, math.ceil(a / self.dt - _EPS))
        hi = min(self.time_steps, math.floor(b / self.dt + _EPS))
        if hi < lo:
            return np.arange(0)
        return np.arange(lo, hi + 1)

    def nearest_level(self, t):
        return int(np.clip(round(t / self.dt), 0, self.time_steps))

    def nearest_cell(self, point):
        p = np.atleast_1d(np.asarray(point, dtype=float))
        d2 = np.sum((self.centers() - p[None, :]) ** 2, axis=1)
        return int(np.argmin(d2))


def refine(grid: GridDomain, space_factor=2, time_factor=None) -> GridDomain:
    """Refined copy: cells split per axis; dt scaled so T is preserved.

    time_factor defaults to space_factor**2 (parabolic scaling).
    """
    if time_factor is None:
        time_factor = space_factor**2
    return GridDomain(
        dim=grid.dim,
        origin=grid.origin,
        extent=grid.extent,
        shape=tuple(s * space_factor for s in grid.shape),
        time_steps=grid.time_steps * time_factor,
        dt=grid.dt / time_factor,
    )


@dataclass
class BallFamily:
    """Finite stand-in for 'for every ball': centers x geometric radius ladder."""

    centers: list                 # points (floats in 1D are fine)
    radii: list                   # shared radius ladder, ascending
    restriction: tuple = None     # optional sub-box ((lo,...), (hi,...))

    def __post_init__(self):
        if len(self.radii) < 2:
            raise EmptyFamily("at least 2 radii per center")
        self.radii = sorted(float(r) for r in self.radii)
        self.centers = [np.atleast_1d(np.asarray(c, dtype=float)) for c in self.centers]
        if not self.centers:
            raise EmptyFamily("no centers")

    @classmethod
    def dyadic(cls, center, r_min, r_max, extra_centers=()):
        radii = []
        r = float(r_min)
        while r <= r_max * (1 + _EPS):
            radii.append(r)
            r *= 2
        if len(radii) < 2:
            radii = [float(r_min), float(r_max)]
        return cls(centers=[center, *extra_centers], radii=radii)

    def balls(self, grid: GridDomain, require_inside=False, factor=1.0,
              on_escape="raise"):
        """Yield (center, r, mask) for balls intersected with the grid.

        factor > 1 demands the scaled ball factor*r stay inside the box
        (used by doubling-type sweeps); violations raise BallEscapesDomain
        unless on_escape == 'skip'.
        """
        got = False
        skipped = False
        for c in self.centers:
            if self.restriction is not None:
                lo, hi = self.restriction
                if any(c[a] < lo[a] or c[a] > hi[a] for a in range(grid.dim)):
                    continue
            for r in self.radii:
                if require_inside and not grid.ball_inside(c, factor * r):
                    if on_escape == "skip":
                        skipped = True
                        continue
                    raise BallEscapesDomain(
                        f"ball ({c}, {factor * r:g}) escapes the domain box")
                mask = grid.ball_mask(c, r)
                if not mask.any():
                    continue
                got = True
                yield c, r, mask
        if not got and not skipped:
            raise EmptyFamily("no ball in the family intersects the grid")

    def concentric_pairs(self, grid: GridDomain):
        """Yield (center, r, rho, mask_r, mask_rho) for radius pairs r < rho."""
        for c in self.centers:
            masks = [(r, grid.ball_mask(c, r)) for r in self.radii]
            masks = [(r, m) for r, m in masks if m.any()]
            for i in range(len(masks)):
                for j in range(i + 1, len(masks)):
                    yield c, masks[i][0], masks[j][0], masks[i][1], masks[j][1]
