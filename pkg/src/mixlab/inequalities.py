"""Both sides of the weighted Sobolev-Poincare / interpolation / two-level-set
inequalities for grid functions, and the measure-concentration search.

Each routine returns the two sides of a display so callers can report the
empirical constant; nothing here asserts an inequality by itself.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadKappa,
    DegenerateLevels,
    PreconditionFailed,
    ZeroGradient,
)
from .fields import SpaceTimeField, SpatialField, grad_norm_sq
from .weights import WeightField

_TOL = 1e-12


class HypothesisUnverified(UserWarning):
    pass


def _wavg(weight: WeightField, mask, integrand):
    """(1/w(B)) * integral_B of integrand * w."""
    wB = weight.measure(mask)
    if wB <= 0:
        return 0.0
    val = np.sum(integrand[mask] * weight.values[mask]) * weight.grid.cell_measure
    return val / wB


def check_side_hypothesis(u: SpatialField, nu: WeightField, ball_mask, tol=1e-8):
    """Verify the declared support / weighted-zero-mean hypothesis."""
    if u.hypothesis == "support":
        outside = ~ball_mask
        return bool(np.all(np.abs(u.values[outside]) <= tol * (1 + np.abs(u.values).max())))
    if u.hypothesis == "zero_mean":
        m = _wavg(nu, ball_mask, u.values)
        return bool(abs(m) <= tol * (1 + np.abs(u.values).max()))
    return False


def sobolev_poincare_sides(u: SpatialField, nu: WeightField, omega: WeightField,
                           p: float, q: float, ball_mask, rho: float,
                           verify_hypothesis=True):
    """lhs = (nu-avg |u|^q)^(1/q), rhs_over_gamma1 = rho * (omega-avg |Du|^p)^(1/p)."""
    if verify_hypothesis and not check_side_hypothesis(u, nu, ball_mask):
        warnings.warn("field satisfies neither support nor zero-mean hypothesis",
                      HypothesisUnverified, stacklevel=2)
    lhs = _wavg(nu, ball_mask, np.abs(u.values) ** q) ** (1.0 / q)
    gsq = u.grad_norm_sq()
    rhs = rho * _wavg(omega, ball_mask, gsq ** (p / 2.0)) ** (1.0 / p)
    if rhs <= _TOL and lhs > 1e-8:
        raise ZeroGradient("vanishing gradient side with nonzero function side")
    return float(lhs), float(rhs)


def empirical_gamma1(u, nu, omega, p, q, ball_mask, rho, **kw):
    lhs, rhs = sobolev_poincare_sides(u, nu, omega, p, q, ball_mask, rho, **kw)
    return 0.0 if lhs == 0 else lhs / rhs


def interpolation_sides(u: SpatialField, A_mask, nu: WeightField, omega: WeightField,
                   upsilon: WeightField, kappa: float, ball_mask, rho: float,
                   gamma1: float = 1.0):
    """Interpolated level-set display: measure-weighted |u|^(2 kappa) on A against
    (energy)^(kappa-1) x gradient energy."""
    if kappa <= 1:
        raise BadKappa("kappa must exceed 1")
    area = u.grid.cell_measure
    upsB = upsilon.measure(ball_mask)
    nuB = nu.measure(ball_mask)
    omB = omega.measure(ball_mask)
    lhs = np.sum(np.abs(u.values[A_mask]) ** (2 * kappa) * upsilon.values[A_mask]) * area / upsB
    t1 = np.sum(u.values[A_mask] ** 2 * nu.values[A_mask]) * area / nuB
    gsq = u.grad_norm_sq()
    t2 = np.sum(gsq[ball_mask] * omega.values[ball_mask]) * area / omB
    rhs = gamma1**2 * rho**2 * t1 ** (kappa - 1.0) * t2
    return float(lhs), float(rhs)


def two_level_set_check(v: SpatialField, k: float, l: float, Z_mask,
                        nu: WeightField, omega: WeightField, p: float, q: float,
                        ball_mask, rho: float, gamma1: float = 1.0):
    """Two-level-set display: (l-k)^q nubar{v<k} nubar{v>l} against the
    transition-band gradient energy.  nubar kills the exceptional set Z."""
    if k >= l:
        raise DegenerateLevels("need k < l")
    grid = v.grid
    area = grid.cell_measure
    nubar = np.where(Z_mask, 0.0, nu.values)
    below = ball_mask & (v.values < k)
    above = ball_mask & (v.values > l)
    lhs = (l - k) ** q * np.sum(nubar[below]) * area * np.sum(nubar[above]) * area
    band = ball_mask & (v.values > k) & (v.values < l)
    gsq = v.grad_norm_sq()
    energy = np.sum(gsq[band] ** (p / 2.0) * omega.values[band]) * area
    nubarB = np.sum(nubar[ball_mask]) * area
    rhs = (2.0**q * gamma1**q * rho**q * nubarB * nu.measure(ball_mask)
           * omega.measure(ball_mask) ** (-q / p) * energy ** (q / p))
    return float(lhs), float(rhs)


# ----------------------------------------------------------------------
# time-integrated corollaries
# ----------------------------------------------------------------------

def time_sobolev_sides(u: SpaceTimeField, nu: WeightField, omega: WeightField,
                       p: float, ball_mask, rho: float, t_window):
    """Same-exponent space-time display obtained by integrating slices in time."""
    grid = u.grid
    steps = grid.window_steps(*t_window)
    if steps.size == 0:
        return 0.0, 0.0
    lhs_p = 0.0
    rhs_p = 0.0
    for n in steps:
        sl = u.slice(n)
        lhs_p += _wavg(nu, ball_mask, np.abs(sl) ** p) * grid.dt
        gsq = grad_norm_sq(grid, sl)
        rhs_p += _wavg(omega, ball_mask, gsq ** (p / 2.0)) * grid.dt
    return float(lhs_p ** (1.0 / p)), float(rho * rhs_p ** (1.0 / p))


def time_level_set_sides(u: SpaceTimeField, k: float, l: float, Z_mask,
                         nu: WeightField, omega: WeightField, p: float,
                         ball_mask, rho: float, t_window, gamma1: float = 1.0):
    """Space-time two-level-set display with the product measure nubar x dt."""
    if k >= l:
        raise DegenerateLevels("need k < l")
    grid = u.grid
    steps = grid.window_steps(*t_window)
    if steps.size == 0:
        return 0.0, 0.0
    area = grid.cell_measure
    nubar = np.where(Z_mask, 0.0, nu.values)
    below = above = 0.0
    energy = 0.0
    for n in steps:
        sl = u.slice(n)
        below += np.sum(nubar[ball_mask & (sl < k)]) * area * grid.dt
        above += np.sum(nubar[ball_mask & (sl > l)]) * area * grid.dt
        band = ball_mask & (sl > k) & (sl < l)
        gsq = grad_norm_sq(grid, sl)
        energy += np.sum(gsq[band] ** (p / 2.0) * omega.values[band]) * area * grid.dt
    lhs = (l - k) ** p * below * above
    (a, b) = t_window
    nubar_box = np.sum(nubar[ball_mask]) * area * (b - a)
    rhs = (2.0**p * gamma1**p * rho**p * nubar_box
           * nu.measure(ball_mask) / omega.measure(ball_mask) * energy)
    return float(lhs), float(rhs)


def time_interpolation_sides(u: SpaceTimeField, A_masks, nu: WeightField,
                        omega: WeightField, upsilon: WeightField, kappa: float,
                        ball_mask, rho: float, t_window, gamma1: float = 1.0):
    """Time-integrated interpolation display with a sup-in-time energy factor.

    A_masks maps level -> spatial mask of the slice of the open set E.
    """
    if kappa <= 1:
        raise BadKappa("kappa must exceed 1")
    grid = u.grid
    steps = grid.window_steps(*t_window)
    if steps.size == 0:
        return 0.0, 0.0
    area = grid.cell_measure
    upsB = upsilon.measure(ball_mask)
    nuB = nu.measure(ball_mask)
    omB = omega.measure(ball_mask)
    lhs = 0.0
    sup_energy = 0.0
    grad_energy = 0.0
    for n in steps:
        sl = u.slice(n)
        A = A_masks(n) if callable(A_masks) else A_masks
        lhs += np.sum(np.abs(sl[A]) ** (2 * kappa) * upsilon.values[A]) * area * grid.dt
        sup_energy = max(sup_energy,
                         np.sum(sl[A] ** 2 * nu.values[A]) * area)
        gsq = grad_norm_sq(grid, sl)
        grad_energy += np.sum(gsq[ball_mask] * omega.values[ball_mask]) * area * grid.dt
    lhs /= upsB
    rhs = (gamma1**2 * rho**2 * (1.0 / nuB) ** (kappa - 1.0)
           * sup_energy ** (kappa - 1.0) * grad_energy / omB)
    return float(lhs), float(rhs)


# ----------------------------------------------------------------------
# measure concentration search
# ----------------------------------------------------------------------

def time_integrated_sides(u: SpaceTimeField, which: str, **kwargs):
    """Dispatcher over the three time-integrated displays:
    'sobolev', 'level_set', or 'interpolation'."""
    if which == "sobolev":
        return time_sobolev_sides(u, **kwargs)
    if which == "level_set":
        return time_level_set_sides(u, **kwargs)
    if which == "interpolation":
        return time_interpolation_sides(u, **kwargs)
    raise ValueError(f"unknown display {which!r}")


def random_support_corpus(grid, count, seed=0, amplitude=1.0):
    """Random smooth compactly supported fields for empirical-constant sweeps."""
    rng = np.random.default_rng(seed)
    cent = grid.centers()
    out = []
    for _ in range(count):
        c = np.array([grid.origin[a] + grid.extent[a] * rng.uniform(0.35, 0.65)
                      for a in range(grid.dim)])
        r = min(grid.extent) * rng.uniform(0.15, 0.3)
        bump = np.maximum(0.0, 1.0 - np.sum((cent - c) ** 2, axis=1) / r**2) ** 2
        out.append(SpatialField(grid, amplitude * rng.uniform(0.5, 2.0) * bump,
                                hypothesis="support"))
    return out


def corpus_report(fields, nu, omega, p, q, ball_mask, rho):
    """Per-field empirical constants: records {inequality_id, lhs, rhs, ratio}."""
    records = []
    for i, u in enumerate(fields):
        lhs, rhs = sobolev_poincare_sides(u, nu, omega, p, q, ball_mask, rho)
        records.append({"inequality_id": "sobolev_poincare", "witness": i,
                        "lhs": lhs, "rhs": rhs,
                        "ratio": 0.0 if lhs == 0 else lhs / rhs})
    return records


@dataclass
class ConcentrationResult:
    found: bool
    center: tuple = None
    radius: float = None
    mask: np.ndarray = None
    eta: float = None
    density: float = None


ETA_LADDER = tuple(0.5**k for k in range(1, 7))


def concentration_search(u: SpatialField, B_mask, sigma: float, alpha: float,
                         beta: float, eps: float, delta: float,
                         nu: WeightField, omega: WeightField, ball_mask,
                         rho: float, eta_ladder=ETA_LADDER) -> ConcentrationResult:
    """Scan a descending eta-ladder for a sub-ball of the open set where
    {u > eps} fills a (1-delta) nu-fraction.

    Preconditions (checked): gradient energy over the sigma-fattening of the
    set bounded by beta * omega(B)/rho^2, and nu({u > 1} within the set) at
    least alpha * nu(B).
    """
    grid = u.grid
    area = grid.cell_measure
    part_mask = np.asarray(B_mask, dtype=bool)
    centers = grid.centers()

    # sigma-fattening of the set by center distance
    from scipy.spatial import cKDTree

    tree = cKDTree(centers[part_mask])
    d, _ = tree.query(centers, k=1)
    fat = part_mask | (d < sigma)

    gsq = u.grad_norm_sq()
    genergy = np.sum(gsq[fat] * omega.values[fat]) * area
    gbound = beta * omega.measure(ball_mask) / rho**2
    if genergy > gbound * (1 + 1e-9):
        raise PreconditionFailed(
            f"gradient bound broke: {genergy:g} > {gbound:g}")
    high = part_mask & (u.values > 1.0)
    mval = np.sum(nu.values[high]) * area
    mbound = alpha * nu.measure(ball_mask)
    if mval < mbound * (1 - 1e-9):
        raise PreconditionFailed(
            f"measure bound broke: {mval:g} < {mbound:g}")

    set_idx = np.flatnonzero(part_mask)
    for eta in eta_ladder:
        r = eta * rho
        # coarse lattice of candidate centers, spacing about r/2
        stride = max(1, int(round((r / 2) / min(grid.cell_size))))
        cand = set_idx[::stride] if set_idx.size else set_idx
        for ci in cand:
            sub = grid.ball_mask(centers[ci], r)
            if not sub.any() or not np.all(part_mask[sub]):
                continue
            nus = nu.measure(sub)
            if nus <= 0:
                continue
            dens = np.sum(nu.values[sub & (u.values > eps)]) * area / nus
            if dens > 1.0 - delta:
                return ConcentrationResult(True, tuple(centers[ci]), r, sub,
                                           eta, float(dens))
    return ConcentrationResult(False)
