"""Positivity propagation and Harnack-type ratios on solved fields.

Discrete conventions: 'a.e.' means every cell, sup/inf are max/min over cells,
point values are nearest-cell lookups.  Every report is invariant under
u -> c*u with c > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ContainmentFailed,
    InsufficientLadder,
    LadderExhausted,
    NonPositiveField,
    NotApplicable,
    NotOnInterface,
    SeedConditionFailed,
)
from .errors import NoPositiveLambdaHat
from .fields import SpaceTimeField
from .weights import ProblemWeights

LAMBDA_LADDER = tuple(0.5**k for k in range(1, 21))


@dataclass
class PositivityQuery:
    x_star: tuple
    t_star: float
    rho: float
    h_level: float = 1.0          # the seed level
    beta: float = 16.0            # window scale in units of h(x*,4 rho) rho^2
    beta_tilde: float = None      # forward/backward sub-window; defaults to beta
    theta_hat: float = 0.5
    case: str = "plus"            # plus | minus | zero | omega0

    def __post_init__(self):
        if self.beta_tilde is None:
            self.beta_tilde = self.beta


@dataclass
class HarnackQuery:
    x_o: tuple
    t_o: float
    rho: float
    theta: float = 1.0            # waiting-time factor in (0, 1]
    omega: float = 1.0            # symmetric-window factor in (0, 16] (case iii)
    case: str = "i"               # i | ii | iii | iv | mixed


@dataclass
class HarnackReport:
    value_at_point: float
    inf_over_target: float
    ratio: float
    target: str
    sup_over_target: float = None
    equivalent_ratio: float = None
    refinement_trend: float = None


def _require(cond, exc, msg):
    if not cond:
        raise exc(msg)


def _check_window(grid, a, b):
    _require(a >= -1e-12 and b <= grid.T + 1e-12, ContainmentFailed,
             f"time window ({a:g}, {b:g}) escapes (0, {grid.T:g})")


def _steps_or_nearest(grid, a, b):
    """Window levels, with sub-dt windows collapsing to the nearest level."""
    steps = grid.window_steps(a, b)
    if steps.size == 0:
        steps = np.array([grid.nearest_level(0.5 * (a + b))])
    return steps


def _positive_on(u, mask, steps):
    if mask.any() and steps.size:
        if np.min(u.values[np.ix_(np.flatnonzero(mask), steps)]) < 0:
            raise NonPositiveField("field is negative on the relevant region")


# ----------------------------------------------------------------------
# measure-shrinking checks
# ----------------------------------------------------------------------

def _seed_ok(u, mask, level, h):
    return mask.any() and np.all(u.values[mask, level] >= h * (1 - 1e-12))


def level_set_shrink_check(u: SpaceTimeField, query: PositivityQuery,
                           h_level: float, eta: float, pw: ProblemWeights,
                           region_doubling: float):
    """Measure of the eta*h sublevel set in the 4rho-ball against the
    1 - 1/(2 q^2) shrink bound, per time in the intrinsic window."""
    g = u.grid
    x, t, rho = query.x_star, query.t_star, query.rho
    _require(g.ball_inside(x, 4 * rho), ContainmentFailed, "need B_4rho inside")
    h4 = pw.h(x, 4 * rho)
    n_star = g.nearest_level(t)
    case = query.case
    if case == "plus":
        w = pw.mu_plus()
        region = pw.part.region_mask(1)
        steps = _steps_or_nearest(g, t, t + query.beta_tilde * h4 * rho**2)
    elif case == "minus":
        w = pw.mu_minus()
        region = pw.part.region_mask(-1)
        steps = _steps_or_nearest(g, t - query.beta_tilde * h4 * rho**2, t)
    else:
        w = pw.lam_sign(0)
        region = pw.part.region_mask(0)
        steps = np.array([n_star])
    seed = g.ball_mask(x, rho) & region
    if not seed.any():
        raise NotApplicable(f"empty seed set for case {case!r}")
    if not _seed_ok(u, seed, n_star, h_level):
        raise SeedConditionFailed("field below the seed level on the seed set")
    big = g.ball_mask(x, 4 * rho) & region
    den = w.measure(big)
    ratios = []
    for n in steps:
        low = big & (u.slice(n) < eta * h_level)
        ratios.append(w.measure(low) / den if den > 0 else 0.0)
    bound = 1.0 - 0.5 / region_doubling**2
    return {"ratios": ratios, "max_ratio": max(ratios), "bound": bound,
            "passed": max(ratios) <= bound + 1e-12}


def shrink_eta_witness(u, query, h_level, pw, region_doubling,
                       ladder=tuple(0.5**k for k in range(1, 11))):
    """Largest eta on a descending ladder passing the shrink bound."""
    results = {}
    for eta in ladder:
        res = level_set_shrink_check(u, query, h_level, eta, pw, region_doubling)
        results[eta] = res
        if res["passed"]:
            return eta, results
    raise LadderExhausted("no eta on the ladder passes the shrink bound")


def shrink_in_measure_check(u: SpaceTimeField, query: PositivityQuery,
                            h_level: float, eps_target: float,
                            pw: ProblemWeights, eta: float,
                            kappa: float = 1.0, tau: float = 1.0,
                            m_ladder: int = 20):
    """Smallest eta_1 = eta / 2^m making the space-time sublevel measure an
    eps fraction (and the lambda variant a kappa*eps^tau fraction)."""
    g = u.grid
    x, t, rho = query.x_star, query.t_star, query.rho
    _require(g.ball_inside(x, 5 * rho), ContainmentFailed, "need B_5rho inside")
    h4 = pw.h(x, 4 * rho)
    f = h4 * rho**2
    case = query.case
    if case == "plus":
        win = (t, t + query.beta_tilde * f)
        w_main = pw.mu_plus()
        w_lam = pw.lam_sign(1)
        region = pw.part.region_mask(1)
    elif case == "minus":
        win = (t - query.beta_tilde * f, t)
        w_main = pw.mu_minus()
        w_lam = pw.lam_sign(-1)
        region = pw.part.region_mask(-1)
    else:
        win = (t - query.beta * f, t + query.beta * f)
        w_main = pw.lam_sign(0)
        w_lam = None
        region = pw.part.region_mask(0)
    _check_window(g, *win)
    steps = _steps_or_nearest(g, *win)
    seed = g.ball_mask(x, rho) & region
    if not seed.any():
        raise NotApplicable(f"empty seed set for case {case!r}")
    big = g.ball_mask(x, 4 * rho)
    big_r = big & region
    dtv = g.dt
    denom_m = pw.mula.measure(big) * steps.size * dtv
    denom_l = pw.lam.measure(big) * steps.size * dtv
    for m in range(m_ladder + 1):
        eta1 = eta / 2.0**m
        meas_main = 0.0
        meas_lam = 0.0
        for n in steps:
            low = big_r & (u.slice(n) < eta1 * h_level)
            meas_main += w_main.measure(low) * dtv
            if w_lam is not None:
                meas_lam += w_lam.measure(low) * dtv
        ok_main = meas_main <= eps_target * denom_m + 1e-15
        ok_lam = (w_lam is None) or \
            (meas_lam <= kappa * eps_target**tau * denom_l + 1e-15)
        if case == "zero":
            ok_main = meas_main <= eps_target * denom_l + 1e-15
        if ok_main and ok_lam:
            return {"m": m, "eta1": eta1, "measure": meas_main,
                    "epsilon": eps_target}
    raise LadderExhausted("eta ladder exhausted without reaching the target")


# ----------------------------------------------------------------------
# expansion of positivity
# ----------------------------------------------------------------------

def expansion_of_positivity_check(u: SpaceTimeField, query: PositivityQuery,
                                  pw: ProblemWeights,
                                  ladder=LAMBDA_LADDER):
    """Largest dyadic lambda-hat with u >= lambda_hat * h on the expanded set."""
    g = u.grid
    x, t, rho, h = query.x_star, query.t_star, query.rho, query.h_level
    case = query.case
    _require(g.ball_inside(x, 5 * rho), ContainmentFailed, "need B_5rho inside")
    h4 = pw.h(x, 4 * rho)
    f = h4 * rho**2
    n_star = g.nearest_level(t)
    if case in ("plus", "minus"):
        _check_window(g, t - query.beta * f, t + query.beta * f)
        sign = 1 if case == "plus" else -1
        region = pw.part.region_mask(sign)
        seed = g.ball_mask(x, rho) & region
        if not seed.any():
            raise NotApplicable("empty seed set")
        if not _seed_ok(u, seed, n_star, h):
            raise SeedConditionFailed("field below the seed level on the seed set")
        target = g.ball_mask(x, 2 * rho) & region
        if case == "plus":
            win = (t + query.theta_hat * query.beta_tilde * f,
                   t + query.beta_tilde * f)
        else:
            # positivity propagates against the backward regime's time arrow
            win = (t - query.beta_tilde * f,
                   t - query.theta_hat * query.beta_tilde * f)
        steps = _steps_or_nearest(g, *win)
    elif case == "zero":
        win = (t - query.beta * f, t + query.beta * f)
        _check_window(g, *win)
        steps = _steps_or_nearest(g, *win)
        region = pw.part.region_mask(0)
        seed = g.ball_mask(x, rho) & region
        if not seed.any():
            raise NotApplicable("empty seed set")
        for n in steps:
            if not _seed_ok(u, seed, n, h):
                raise SeedConditionFailed("seed fails inside the window")
        target = g.ball_mask(x, 2 * rho) & region
    else:  # omega0: one slice, B_5rho inside the zero region
        if not np.all(pw.part.labels[g.ball_mask(x, 5 * rho)] == 0):
            raise NotApplicable("B_5rho is not inside the zero region")
        seed = g.ball_mask(x, rho)
        if not _seed_ok(u, seed, n_star, h):
            raise SeedConditionFailed("field below the seed level on the seed set")
        target = g.ball_mask(x, 2 * rho)
        steps = np.array([n_star])
    if not target.any() or steps.size == 0:
        raise NotApplicable("empty target set")
    tmin = float(np.min(u.values[np.ix_(np.flatnonzero(target), steps)]))
    for lam_hat in ladder:
        if tmin >= lam_hat * h:
            return {"lambda_hat": lam_hat, "target_min": tmin,
                    "target_cells": int(target.sum()), "steps": steps.tolist()}
    raise NoPositiveLambdaHat("field not bounded below on the target set")


# ----------------------------------------------------------------------
# Harnack ratios
# ----------------------------------------------------------------------

def _region_membership(pw: ProblemWeights, cell, sign):
    return bool(pw.part.labels[cell] == sign or pw.part.interface_cells(sign)[cell])


def harnack_constant(u: SpaceTimeField, query: HarnackQuery,
                     pw: ProblemWeights) -> HarnackReport:
    g = u.grid
    x, t, rho = query.x_o, query.t_o, query.rho
    cell = g.nearest_cell(x)
    _require(g.ball_inside(x, 5 * rho), ContainmentFailed, "need B_5rho inside")
    h1 = pw.h(x, rho)
    h4 = pw.h(x, 4 * rho)
    case = query.case
    if case == "i":
        _require(_region_membership(pw, cell, 1), NotApplicable,
                 "query point is not in the closed plus region")
        _check_window(g, t - h1 * rho**2, t + 16 * h4 * rho**2 + query.theta * h1 * rho**2)
        target = g.ball_mask(x, rho) & pw.part.region_mask(1)
        if not target.any():
            raise NotApplicable("empty positive set in the ball")
        lev = g.nearest_level(t + query.theta * rho**2 * h1)
        _positive_on(u, g.ball_mask(x, 5 * rho), g.window_steps(
            max(0.0, t - h1 * rho**2), min(g.T, t + 16 * h4 * rho**2 + query.theta * h1 * rho**2)))
        val = u.at(x, t)
        inf = float(np.min(u.values[target, lev]))
        ratio = val / inf if inf > 0 else math.inf
        return HarnackReport(val, inf, ratio,
                             f"B_rho^+ at t_o + {query.theta:g}*rho^2*h")
    if case == "ii":
        _require(_region_membership(pw, cell, -1), NotApplicable,
                 "query point is not in the closed minus region")
        _check_window(g, t - 16 * h4 * rho**2 - query.theta * h1 * rho**2, t + h1 * rho**2)
        target = g.ball_mask(x, rho) & pw.part.region_mask(-1)
        if not target.any():
            raise NotApplicable("empty negative set in the ball")
        lev = g.nearest_level(t - query.theta * rho**2 * h1)
        _positive_on(u, g.ball_mask(x, 5 * rho), g.window_steps(
            max(0.0, t - 16 * h4 * rho**2 - query.theta * h1 * rho**2), min(g.T, t + h1 * rho**2)))
        val = u.at(x, t)
        inf = float(np.min(u.values[target, lev]))
        ratio = val / inf if inf > 0 else math.inf
        return HarnackReport(val, inf, ratio,
                             f"B_rho^- at t_o - {query.theta:g}*rho^2*h")
    if case == "iii":
        _require(_region_membership(pw, cell, 0), NotApplicable,
                 "query point is not in the closed zero region")
        _require(0 < query.omega <= 16, ContainmentFailed, "omega must lie in (0, 16]")
        half = query.omega * h4 * rho**2
        _check_window(g, t - half, t + half)
        steps = g.window_steps(t - half, t + half)
        target = g.ball_mask(x, rho) & pw.part.region_mask(1)
        if not target.any() or steps.size == 0:
            raise NotApplicable("empty positive set or window in case iii")
        block = u.values[np.ix_(np.flatnonzero(target), steps)]
        if np.min(block) < 0:
            raise NonPositiveField("field negative on the case-iii window")
        sup, inf = float(np.max(block)), float(np.min(block))
        ratio = sup / inf if inf > 0 else math.inf
        return HarnackReport(sup, inf, ratio,
                             f"B_rho^+ x symmetric window (omega={query.omega:g})",
                             sup_over_target=sup)
    if case == "iv":
        ball5 = g.ball_mask(x, 5 * rho)
        _require(bool(np.all(pw.part.labels[ball5] == 0)), NotApplicable,
                 "B_5rho is not inside the zero region")
        lev = g.nearest_level(t)
        target = g.ball_mask(x, rho)
        sl = u.values[target, lev]
        if np.min(sl) < 0:
            raise NonPositiveField("field negative on the slice")
        sup, inf = float(np.max(sl)), float(np.min(sl))
        ratio = sup / inf if inf > 0 else math.inf
        return HarnackReport(sup, inf, ratio, "B_rho slice", sup_over_target=sup)
    raise ValueError(f"unknown case {case!r}")


def harnack_mixed(u: SpaceTimeField, query: HarnackQuery,
                  pw: ProblemWeights) -> HarnackReport:
    """Interface form: piecewise target slice (future on plus, past on minus,
    present on zero) and the reversed equivalent formulation."""
    g = u.grid
    x, t, rho = query.x_o, query.t_o, query.rho
    cell = g.nearest_cell(x)
    part = pw.part
    on_p = part.interface_cells(1)[cell]
    on_m = part.interface_cells(-1)[cell]
    on_z = part.interface_cells(0)[cell]
    if not (on_p or on_m or on_z):
        raise NotOnInterface("query point is not an interface cell")
    _require(g.ball_inside(x, 5 * rho), ContainmentFailed, "need B_5rho inside")
    h1 = pw.h(x, rho)
    h4 = pw.h(x, 4 * rho)
    wait = query.theta * h1 * rho**2
    _check_window(g, t - 16 * h4 * rho**2 - wait, t + 16 * h4 * rho**2 + wait)
    ball = g.ball_mask(x, rho)
    lev_p = g.nearest_level(t + wait)
    lev_m = g.nearest_level(t - wait)
    lev_0 = g.nearest_level(t)

    pieces = []       # the target of the direct form
    rev_pieces = []   # the reversed (equivalent) form
    for sign, lev, lev_rev in ((1, lev_p, lev_m), (-1, lev_m, lev_p), (0, lev_0, lev_0)):
        m = ball & part.region_mask(sign)
        if m.any():
            pieces.append(u.values[m, lev])
            rev_pieces.append(u.values[m, lev_rev])
    if not pieces:
        raise NotApplicable("ball contains no cells")
    tgt = np.concatenate(pieces)
    if np.min(tgt) < 0:
        raise NonPositiveField("field negative on the target")
    val = u.at(x, t)
    inf = float(np.min(tgt))
    ratio = val / inf if inf > 0 else math.inf
    rev = np.concatenate(rev_pieces)
    now = u.values[ball, lev_0]
    eq_ratio = float(np.max(rev)) / float(np.min(now)) if np.min(now) > 0 else math.inf
    return HarnackReport(val, inf, ratio,
                         "piecewise future/past/present slice over B_rho",
                         sup_over_target=float(np.max(rev)),
                         equivalent_ratio=eq_ratio)


# ----------------------------------------------------------------------
# oscillation decay and the maximum principle
# ----------------------------------------------------------------------

OSC_CAP = 1e6


def holder_exponent(u: SpaceTimeField, point, t_center, radii,
                    pw: ProblemWeights, gamma: float = None):
    """Least-squares slope of log osc against log rho over intrinsic cylinders
    (time window rho^2 h(x, rho)); the energy-constant prediction
    log2(gamma/(gamma-1)) is reported alongside when gamma > 1."""
    g = u.grid
    radii = sorted(float(r) for r in radii)
    if len(radii) < 4:
        raise InsufficientLadder("need at least 4 radii")
    oscs = []
    used = []
    for rho in radii:
        if not g.ball_inside(point, rho):
            continue
        h1 = pw.h(point, rho)
        w = rho**2 * h1
        steps = _steps_or_nearest(g, max(0.0, t_center - 0.5 * w),
                                  min(g.T, t_center + 0.5 * w))
        mask = g.ball_mask(point, rho)
        if steps.size == 0 or not mask.any():
            continue
        block = u.values[np.ix_(np.flatnonzero(mask), steps)]
        oscs.append(float(np.max(block) - np.min(block)))
        used.append(rho)
    if len(used) < 4:
        raise InsufficientLadder("fewer than 4 usable intrinsic cylinders")
    oscs = np.asarray(oscs)
    if np.all(oscs <= 0):
        return {"alpha_hat": OSC_CAP, "r_squared": 1.0, "radii": used,
                "osc": oscs.tolist(), "alpha_energy": _alpha_energy(gamma)}
    lx = np.log(np.asarray(used))
    ly = np.log(np.maximum(oscs, 1e-300))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    slope = float(coef[0])
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(res[0]) / ss_tot if res.size else 1.0
    return {"alpha_hat": slope, "r_squared": r2, "radii": used,
            "osc": oscs.tolist(), "alpha_energy": _alpha_energy(gamma)}


def _alpha_energy(gamma):
    if gamma is None or gamma <= 1:
        return None
    return math.log2(gamma / (gamma - 1.0))


def negative_control_peak(grid, center=None, t_peak=None,
                          x_width=0.01, t_width=0.001):
    """Bundled negative control: a strict interior space-time peak, which any
    maximum-principle check must flag (non-constant past below the peak)."""
    c = np.asarray(center if center is not None else
                   [grid.origin[a] + 0.5 * grid.extent[a] for a in range(grid.dim)])
    tp = 0.5 * grid.T if t_peak is None else t_peak
    x = grid.centers()
    t = grid.times()
    d2 = np.sum((x - c[None, :]) ** 2, axis=1)
    vals = np.exp(-d2 / x_width)[:, None] * np.exp(-(t - tp) ** 2 / t_width)[None, :]
    return SpaceTimeField(grid, vals)


def max_principle_check(u: SpaceTimeField, point, t_o, theta, rho,
                        pw: ProblemWeights, tol=1e-9):
    """If the field peaks at (point, t_o) over the piecewise neighborhood, it
    must be constant on past-plus / present-zero / future-minus."""
    g = u.grid
    _require(g.ball_inside(point, rho), ContainmentFailed, "need B_rho inside")
    h1 = pw.h(point, rho)
    w = theta * h1 * rho**2
    lev = g.nearest_level(t_o)
    win_full = g.window_steps(max(0.0, t_o - w), min(g.T, t_o + w))
    ball = g.ball_mask(point, rho)
    parts = []
    for sign, steps in ((1, win_full), (-1, win_full), (0, np.array([lev]))):
        m = ball & pw.part.region_mask(sign)
        if m.any() and steps.size:
            parts.append((sign, m, steps))
    if not parts:
        raise NotApplicable("empty neighborhood")
    big = max(float(np.max(u.values[np.ix_(np.flatnonzero(m), s)]))
              for _sg, m, s in parts)
    val = u.at(point, t_o)
    scale = max(1.0, abs(big))
    if val < big - tol * scale:
        return {"verdict": "not-applicable",
                "note": "maximum not attained at the query point"}
    past = g.window_steps(max(0.0, t_o - w), t_o)
    future = g.window_steps(t_o, min(g.T, t_o + w))
    witnesses = []
    for sign, steps in ((1, past), (0, np.array([lev])), (-1, future)):
        m = ball & pw.part.region_mask(sign)
        if not m.any() or steps.size == 0:
            continue
        block = u.values[np.ix_(np.flatnonzero(m), steps)]
        dev = float(np.max(np.abs(block - val)))
        if dev > tol * scale:
            i, j = np.unravel_index(int(np.argmax(np.abs(block - val))), block.shape)
            witnesses.append({"sign": int(sign),
                              "cell": int(np.flatnonzero(m)[i]),
                              "level": int(steps[j]), "deviation": dev})
    if witnesses:
        return {"verdict": "VIOLATION", "witnesses": witnesses}
    return {"verdict": "constant", "witnesses": []}
