"""Intrinsic space-time cylinders and the truncation energy estimates.

The five inequality families are evaluated literally, term by term, on discrete
index sets; gamma is fitted as the smallest constant making every sampled
display hold, and the truncation iteration of the boundedness proof can be
replayed as a numeric trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CylinderEscapes, EmptyCylinder
from .fields import SpaceTimeField, grad_norm_sq
from .weights import ProblemWeights, WeightField

_EPS = 1e-12


@dataclass
class CylinderSpec:
    """One intrinsic cylinder: waiting time sigma_theta = theta*beta*h(x0,R)*R^2.

    kind: 'plus', 'minus' (intrinsic windows), 'zero' (explicit s1, s2),
    'plus_free', 'minus_free' (one-sided windows with free endpoint).
    theta_tilde is pinned to theta - (r_tilde - r)^2 / R^2.
    """

    x0: tuple
    t0: float
    R: float
    r: float
    r_tilde: float
    beta: float = 1.0
    theta: float = 0.5
    eps: float = 0.0
    kind: str = "plus"
    s1: float = None
    s2: float = None

    def __post_init__(self):
        if not (0 < self.r < self.r_tilde <= self.R):
            raise ValueError("need 0 < r < r_tilde <= R")
        if self.kind in ("plus", "minus"):
            tt = self.theta - (self.r_tilde - self.r) ** 2 / self.R**2
            if not (0 <= tt < self.theta < 1):
                raise ValueError("theta incompatible with (r_tilde - r)^2 / R^2")

    @property
    def theta_tilde(self):
        return self.theta - (self.r_tilde - self.r) ** 2 / self.R**2


class CylinderSets:
    """Discrete index sets of one cylinder over a given weight bundle."""

    def __init__(self, spec: CylinderSpec, pw: ProblemWeights):
        self.spec = spec
        self.pw = pw
        g = pw.grid
        self.grid = g
        s = spec
        if not g.ball_inside(s.x0, s.R):
            raise CylinderEscapes("ball escapes the spatial box")
        self.h_R = pw.h(s.x0, s.R)
        height = s.beta * self.h_R * s.R**2
        if s.kind == "plus" or s.kind == "plus_free":
            self.s2 = s.t0 + height if s.s2 is None else s.s2
            self.s1 = s.t0
        elif s.kind == "minus" or s.kind == "minus_free":
            self.s1 = s.t0 - height if s.s1 is None else s.s1
            self.s2 = s.t0
        else:
            if s.s1 is None or s.s2 is None:
                raise ValueError("zero-kind cylinder needs explicit s1, s2")
            self.s1, self.s2 = s.s1, s.s2
        if self.s1 < -_EPS or self.s2 > g.T + _EPS:
            raise CylinderEscapes("time window escapes (0, T)")
        self.sigma = lambda theta: theta * s.beta * self.h_R * s.R**2

    # ---- spatial pieces --------------------------------------------------
    def ball(self, rho):
        return self.grid.ball_mask(self.spec.x0, rho)

    def ball_signed(self, rho, sign):
        return self.ball(rho) & self.pw.part.region_mask(sign)

    def interface_split(self, sign, rho, width):
        """(inside, outside) parts of the width-fattened interface of the
        closed sign-region within the rho-ball."""
        part = self.pw.part
        fsel = part.faces_touching_ball(sign, self.spec.x0, rho)
        fat = part.interface_fatten(width, sign=sign, face_sel=fsel)
        inside = fat & self.ball_signed(rho, sign)
        return inside, fat & ~inside

    def q_signed(self, sign, rho, theta, width):
        """Space-time mask of the fattened signed cylinder."""
        g = self.grid
        mask = np.zeros((g.ncells, g.n_levels), dtype=bool)
        ball_fat = self.ball(rho + width)
        if sign == 1:
            inner = (self.spec.t0 + self.sigma(theta), self.s2)
            outer = (self.spec.t0, self.s2)
        else:
            inner = (self.s1, self.spec.t0 - self.sigma(theta))
            outer = (self.s1, self.spec.t0)
        if np.all(self.pw.part.labels[ball_fat] == sign):
            for n in self.grid.window_steps(*inner):
                mask[ball_fat, n] = True
            return mask
        core = self.pw.part.eps_neighborhood(self.ball_signed(rho, sign), width)
        for n in self.grid.window_steps(*inner):
            mask[core, n] = True
        fsel = self.pw.part.faces_touching_ball(sign, self.spec.x0, rho)
        ifat = self.pw.part.interface_fatten(width, sign=sign, face_sel=fsel)
        for n in self.grid.window_steps(*outer):
            mask[ifat, n] = True
        return mask

    def q_zero(self, rho, width):
        g = self.grid
        mask = np.zeros((g.ncells, g.n_levels), dtype=bool)
        core = self.pw.part.eps_neighborhood(self.ball_signed(rho, 0), width)
        for n in g.window_steps(self.s1, self.s2):
            mask[core, n] = True
        return mask


def build_cylinders(x0, t0, R, beta, theta_ladder, eps_ladder, kind,
                    pw: ProblemWeights, r=None, r_tilde=None, s1=None, s2=None):
    """Cylinder family over theta and fattening ladders with index sets built."""
    r = 0.5 * R if r is None else r
    r_tilde = 0.75 * R if r_tilde is None else r_tilde
    out = []
    for theta in theta_ladder:
        for eps in eps_ladder:
            spec = CylinderSpec(x0=x0, t0=t0, R=R, r=r, r_tilde=r_tilde,
                                beta=beta, theta=theta, eps=eps, kind=kind,
                                s1=s1, s2=s2)
            out.append(CylinderSets(spec, pw))
    return out


# ----------------------------------------------------------------------
# energy displays
# ----------------------------------------------------------------------

def _truncate(u_slice, k, sign):
    return np.maximum(u_slice - k, 0.0) if sign == "+" else np.maximum(k - u_slice, 0.0)


def _sup_time(u: SpaceTimeField, k, sign, mask, window, weight: WeightField):
    g = u.grid
    steps = g.window_steps(*window)
    if steps.size == 0 or not mask.any():
        return 0.0
    best = 0.0
    wv = weight.values[mask] * g.cell_measure
    for n in steps:
        tr = _truncate(u.slice(n)[mask], k, sign)
        best = max(best, float(np.sum(tr * tr * wv)))
    return best


def _st_weighted(u: SpaceTimeField, k, sign, st_mask, weight_vals):
    g = u.grid
    total = 0.0
    for n in range(g.n_levels):
        m = st_mask[:, n]
        if not m.any():
            continue
        tr = _truncate(u.slice(n)[m], k, sign)
        total += float(np.sum(tr * tr * weight_vals[m]))
    return total * g.cell_measure * g.dt


def _st_gradient(u: SpaceTimeField, k, sign, st_mask, lam_vals):
    g = u.grid
    total = 0.0
    for n in range(g.n_levels):
        m = st_mask[:, n]
        if not m.any():
            continue
        tr = _truncate(u.slice(n), k, sign)
        gsq = grad_norm_sq(g, tr)
        total += float(np.sum(gsq[m] * lam_vals[m]))
    return total * g.cell_measure * g.dt


def energy_sides(u: SpaceTimeField, k: float, sets: CylinderSets, sign="+"):
    """(lhs, rhs_without_gamma) of the display matching the cylinder kind."""
    s = sets.spec
    pw = sets.pw
    mu_p = pw.mu_plus()
    mu_m = pw.mu_minus()
    lam = pw.lam
    t0 = s.t0
    w = s.r_tilde - s.r   # localization width

    if s.kind in ("plus", "minus"):
        front = 1 if s.kind == "plus" else -1
        mu_own = mu_p if front == 1 else mu_m
        mu_other = mu_m if front == 1 else mu_p
        if s.kind == "plus":
            win_main = (t0 + sets.sigma(s.theta), sets.s2)
            win_early = (t0, t0 + sets.sigma(s.theta_tilde))
        else:
            win_main = (sets.s1, t0 - sets.sigma(s.theta))
            win_early = (t0 - sets.sigma(s.theta_tilde), t0)
        in_small, out_small = sets.interface_split(front, s.r, s.eps)
        in_big, out_big = sets.interface_split(front, s.r, w + s.eps)
        lhs = (
            _sup_time(u, k, sign, sets.ball(s.r + s.eps) & pw.part.region_mask(front),
                      win_main, mu_own)
            + _sup_time(u, k, sign, out_small, win_early, mu_other)
            + _st_gradient(u, k, sign, sets.q_signed(front, s.r, s.theta, s.eps),
                           lam.values)
        )
        q_big = sets.q_signed(front, s.r, s.theta_tilde, w + s.eps)
        mix = mu_own.values / (s.beta * sets.h_R) + lam.values
        rhs = (
            _sup_time(u, k, sign, in_big, win_early, mu_own)
            + _sup_time(u, k, sign, out_big, win_main, mu_other)
            + _st_weighted(u, k, sign, q_big, mix) / w**2
        )
        if lhs == 0.0 and rhs == 0.0:
            raise EmptyCylinder("all truncation terms vanish")
        return lhs, rhs

    if s.kind == "zero":
        win = (sets.s1, sets.s2)
        _in0, out0 = sets.interface_split(0, s.r, w + s.eps)
        lhs = _st_gradient(u, k, sign, sets.q_zero(s.r, s.eps), lam.values)
        rhs = (
            _sup_time(u, k, sign, out0, win, mu_m)
            + _sup_time(u, k, sign, out0, win, mu_p)
            + _st_weighted(u, k, sign, sets.q_zero(s.r, w + s.eps), lam.values) / w**2
        )
        return lhs, rhs

    if s.kind in ("plus_free", "minus_free"):
        front = 1 if s.kind == "plus_free" else -1
        mu_own = mu_p if front == 1 else mu_m
        mu_other = mu_m if front == 1 else mu_p
        win = (t0, sets.s2) if s.kind == "plus_free" else (sets.s1, t0)
        _in_w, out_w = sets.interface_split(front, s.r, w)
        lhs = _sup_time(u, k, sign, sets.ball_signed(s.r, front), win, mu_own)
        n0 = u.grid.nearest_level(t0)
        tr0 = _truncate(u.slice(n0), k, sign)
        m0 = sets.ball_signed(s.r_tilde, front)
        data_term = float(np.sum(tr0[m0] ** 2 * mu_own.values[m0])) * u.grid.cell_measure
        g = u.grid
        st = np.zeros((g.ncells, g.n_levels), dtype=bool)
        body = sets.ball_signed(s.r_tilde, front) | out_w
        for n in g.window_steps(*win):
            st[body, n] = True
        rhs_gamma = _st_weighted(u, k, sign, st, lam.values) / w**2
        rhs_free = data_term + _sup_time(u, k, sign, out_w, win, mu_other)
        # lhs <= rhs_free + gamma * rhs_gamma: report both pieces
        return lhs, (rhs_free, rhs_gamma)

    raise ValueError(f"unknown cylinder kind {s.kind!r}")


# ----------------------------------------------------------------------
# gamma fitting
# ----------------------------------------------------------------------

@dataclass
class EnergyReport:
    records: list = field(default_factory=list)
    gamma: float = 1.0
    infinite: bool = False
    refinement_ratio: float = None

    def verdict(self):
        if self.infinite:
            return "not-DG"
        return "DG"


def k_ladder(u: SpaceTimeField, levels=16):
    qs = np.linspace(0.0, 1.0, levels + 2)[1:-1]
    return [float(v) for v in np.quantile(u.values, qs)]


def gamma_fit(u: SpaceTimeField, sweep, k_levels=None) -> EnergyReport:
    """Fit the smallest gamma making every sampled display hold; the convention
    for an all-zero sweep (constant fields) is gamma = 1."""
    report = EnergyReport()
    ks = k_ladder(u) if k_levels is None else list(k_levels)
    gamma = 0.0
    seen = False
    for sets in sweep:
        for sign in ("+", "-"):
            for k in ks:
                try:
                    lhs, rhs = energy_sides(u, k, sets, sign)
                except EmptyCylinder:
                    continue
                if isinstance(rhs, tuple):
                    rhs_free, rhs_gamma = rhs
                    num = max(0.0, lhs - rhs_free)
                    if rhs_gamma <= 0:
                        if num > 1e-12 * max(1.0, lhs):
                            report.infinite = True
                        continue
                    implied = num / rhs_gamma
                else:
                    if rhs <= 0:
                        if lhs > 1e-12:
                            report.infinite = True
                        continue
                    implied = lhs / rhs
                seen = True
                gamma = max(gamma, implied)
                report.records.append({
                    "ineq": sets.spec.kind, "sign": sign, "k": k,
                    "lhs": lhs,
                    "rhs": rhs if not isinstance(rhs, tuple) else rhs[1],
                    "implied_gamma": implied,
                })
    report.gamma = gamma if (seen and gamma > 0) else 1.0
    return report


def default_sweep(pw: ProblemWeights, x0, t0, R, beta=1.0,
                  theta_ladder=(0.5,), kinds=None):
    """Cylinder sweep at one anchor: fattening ladder {0, w/2, w} per the
    simultaneous quantification over small fattenings."""
    labels = pw.part.labels
    g = pw.grid
    ball = g.ball_mask(x0, R)
    if kinds is None:
        kinds = []
        if np.any(labels[ball] == 1):
            kinds += ["plus", "plus_free"]
        if np.any(labels[ball] == -1):
            kinds += ["minus", "minus_free"]
        if np.any(labels[ball] == 0):
            kinds.append("zero")
    r, r_tilde = 0.5 * R, 0.75 * R
    w = r_tilde - r
    eps_ladder = (0.0, 0.5 * w, w)
    out = []
    for kind in kinds:
        if kind == "zero":
            height = 0.5 * beta * pw.h(x0, R) * R**2
            s1, s2 = t0 - height, t0 + height
            if s1 < 0 or s2 > g.T:
                continue
            out += build_cylinders(x0, t0, R, beta, (0.5,), eps_ladder, "zero",
                                   pw, s1=s1, s2=s2)
        else:
            try:
                out += build_cylinders(x0, t0, R, beta, theta_ladder,
                                       eps_ladder if kind in ("plus", "minus") else (0.0,),
                                       kind, pw)
            except CylinderEscapes:
                continue
    return out


# ----------------------------------------------------------------------
# local boundedness and the truncation trace
# ----------------------------------------------------------------------

def _normalized_truncation_energy(u, k, sets: CylinderSets, front, rho, theta, width):
    """Normalized truncation energy pair entering the boundedness iteration.

    The reference cylinder measure uses the discrete window length so constant
    fields normalize exactly.
    """
    pw = sets.pw
    g = u.grid
    height = g.window_steps(sets.s1, sets.s2).size * g.dt
    mQ = pw.mula.measure(sets.ball(sets.spec.R)) * height
    lQ = pw.lam.measure(sets.ball(sets.spec.R)) * height
    mu_own = pw.mu_plus() if front == 1 else pw.mu_minus()
    lam_own = pw.lam_sign(front)
    st = sets.q_signed(front, rho, theta, width)
    a = _st_weighted(u, k, "+", st, mu_own.values) / mQ
    b = _st_weighted(u, k, "+", st, lam_own.values) / lQ
    return a + b


def linfty_check(u: SpaceTimeField, x0, t0, R, beta, case, pw: ProblemWeights):
    """(ess_sup, energy_mean_sqrt, implied c_inf) for the boundedness display.

    The right side uses the rho = R/2, fattening R/2 cylinder of the iteration
    seed, which stays inside B_R.
    """
    g = u.grid
    if case in ("i", "ii"):
        kind = "plus" if case == "i" else "minus"
        spec = CylinderSpec(x0=x0, t0=t0, R=R, r=0.5 * R, r_tilde=0.75 * R,
                            beta=beta, theta=0.5, kind=kind)
        sets = CylinderSets(spec, pw)
        front = 1 if case == "i" else -1
        if (pw.mu_plus() if front == 1 else pw.mu_minus()).measure(sets.ball(R)) <= 0:
            raise EmptyCylinder(f"case {case} needs signed mass in the ball")
        if case == "i":
            win = (t0 + sets.sigma(0.5), sets.s2)
        else:
            win = (sets.s1, t0 - sets.sigma(0.5))
        mask = sets.ball_signed(0.5 * R, front)
        steps = g.window_steps(*win)
        if steps.size == 0 or not mask.any():
            raise EmptyCylinder("empty supremum window")
        ess = float(np.max(np.abs(u.values[np.ix_(mask, steps)])))
        seed = _normalized_truncation_energy(u, 0.0, sets, front, 0.5 * R, 0.0, 0.5 * R) \
            + _normalized_truncation_energy(u.scaled(-1.0), 0.0, sets, front, 0.5 * R, 0.0, 0.5 * R)
        rhs = math.sqrt(seed)
    elif case == "iii":
        s1, s2 = t0 - 0.5 * R**2, t0 + 0.5 * R**2
        spec = CylinderSpec(x0=x0, t0=t0, R=R, r=0.5 * R, r_tilde=0.75 * R,
                            kind="zero", s1=s1, s2=s2)
        sets = CylinderSets(spec, pw)
        if pw.lam_sign(0).measure(sets.ball(R)) <= 0:
            raise EmptyCylinder("case iii needs a zero-region inside the ball")
        mask = sets.ball_signed(0.5 * R, 0)
        steps = g.window_steps(s1, s2)
        if steps.size == 0 or not mask.any():
            raise EmptyCylinder("empty supremum window")
        ess = float(np.max(np.abs(u.values[np.ix_(mask, steps)])))
        lQ = pw.lam.measure(sets.ball(R)) * g.window_steps(s1, s2).size * g.dt
        st = sets.q_zero(0.5 * R, 0.5 * R)
        val = _st_weighted(u, 0.0, "+", st, pw.lam_sign(0).values) \
            + _st_weighted(u.scaled(-1.0), 0.0, "+", st, pw.lam_sign(0).values)
        rhs = math.sqrt(val / lQ)
    else:
        raise ValueError("case must be 'i', 'ii', or 'iii'")
    c_inf = float("inf") if rhs == 0 and ess > 0 else (ess / rhs if rhs > 0 else 0.0)
    return ess, rhs, c_inf


def iteration_prefactor(gamma, gamma1, kappa, beta):
    """Iteration prefactor from the boundedness proof."""
    return (gamma1 ** (1.0 / kappa) * (1.0 + beta) ** 0.5
            * beta ** (-0.5 / kappa) * (2.0 * gamma + 8.0) ** 0.5)


def suggested_truncation_step(u0_plus, gamma, gamma1, kappa, beta):
    """The explicit admissible truncation step from the boundedness proof."""
    alpha = (kappa - 1.0) / kappa
    cp = iteration_prefactor(gamma, gamma1, kappa, beta)
    return 2.0 * cp ** (1.0 / alpha) * (1.0 / 3.0) \
        * 4.0 ** (2.0 / alpha + 1.0 / alpha**2 + 1.0) * u0_plus


def truncation_iteration_trace(u: SpaceTimeField, k0, d, R, x0, t0, beta,
                               pw: ProblemWeights, n_steps=8,
                               gamma=None, gamma1=None, kappa=None):
    """Trace of the truncation levels k_n = k0 + d(1 - 2^-n) through shrinking
    cylinders; returns the sequence and the smallness-condition report."""
    spec = CylinderSpec(x0=x0, t0=t0, R=R, r=0.5 * R, r_tilde=0.75 * R,
                        beta=beta, theta=0.5, kind="plus")
    sets = CylinderSets(spec, pw)
    trace = []
    for n in range(n_steps + 1):
        kn = k0 + d * (1.0 - 0.5**n)
        rn = 0.5 * R + R / 2.0 ** (n + 1)
        thetan = 0.5 * (1.0 - 0.25**n)
        trace.append(math.sqrt(_normalized_truncation_energy(u, kn, sets, 1, 0.5 * R, thetan,
                                          rn - 0.5 * R)))
    out = {"trace": trace, "nonincreasing":
           all(trace[i + 1] <= trace[i] + 1e-12 for i in range(len(trace) - 1))}
    if None not in (gamma, gamma1, kappa):
        alpha = (kappa - 1.0) / kappa
        cp = iteration_prefactor(gamma, gamma1, kappa, beta)
        bound = 3.0 * d * cp ** (-1.0 / alpha) \
            * 4.0 ** (-2.0 / alpha - 1.0 / alpha**2 - 1.0)
        out["smallness_bound"] = bound
        out["smallness_holds"] = trace[0] < bound
    return out
