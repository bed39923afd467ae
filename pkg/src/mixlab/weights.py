"""Grid-based Muckenhoupt-weight analysis.

Everything here is a midpoint-rule measure computation over finite ball
families: averaged-product constants, measure-comparison (K, sigma) fits,
doubling and reverse-Holder sweeps, sign partitions with interface geometry,
and the derived constants used by the energy/Harnack verifiers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import (
    BadExponents,
    BallEscapesDomain,
    InfeasibleChain,
    NoFeasibleDelta,
    NoFeasibleTau,
    NonPositiveLambda,
    NonPositiveWeight,
)
from .grid import BallFamily, GridDomain

_RTOL = 1e-9


@dataclass
class WeightField:
    """Cell-sampled weight: signed for mu, strictly positive for lambda-like kinds."""

    grid: GridDomain
    values: np.ndarray
    kind: str = "derived"   # mu | lambda | mu_lambda_abs | derived

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.ncells:
            raise ValueError("values do not match grid")
        if self.kind in ("lambda", "mu_lambda_abs") and not np.all(self.values > 0):
            raise NonPositiveLambda(f"{self.kind} field must be positive everywhere")

    def measure(self, mask):
        """integral of the weight over the cell set (midpoint rule)."""
        return float(np.sum(self.values[mask])) * self.grid.cell_measure

    def restricted(self, cell_mask, kind="derived"):
        vals = np.where(cell_mask, self.values, 0.0)
        return WeightField(self.grid, vals, kind=kind)

    def positive_part(self):
        return WeightField(self.grid, np.maximum(self.values, 0.0), kind="derived")

    def negative_part(self):
        return WeightField(self.grid, np.maximum(-self.values, 0.0), kind="derived")


def constant_field(grid, value, kind="derived"):
    return WeightField(grid, np.full(grid.ncells, float(value)), kind=kind)


# ----------------------------------------------------------------------
# subset sampling (A_infty and two-weight comparison fits)
# ----------------------------------------------------------------------

def sample_subsets(mask, rng, n_random, exhaustive_limit=16):
    """Subsets of the cell set `mask`: the full set, half-splits along each
    axis-ordered coordinate, and random unions of k cells, k in
    {1, |B|/4, |B|/2}.  Exhaustive when |B| <= exhaustive_limit."""
    idx = np.flatnonzero(mask)
    nb = idx.size
    subsets = [idx]
    if nb == 0:
        return subsets
    if nb <= exhaustive_limit:
        for bits in range(1, 2**nb):
            sel = [(bits >> i) & 1 for i in range(nb)]
            subsets.append(idx[np.asarray(sel, dtype=bool)])
        return subsets
    half = nb // 2
    subsets.append(idx[:half])
    subsets.append(idx[half:])
    for k in {1, max(1, nb // 4), max(1, nb // 2)}:
        for _ in range(n_random):
            subsets.append(rng.choice(idx, size=k, replace=False))
    return subsets


def _largest_exponent_fit(nums, bases, grid_exponents):
    """Smallest constant K(s) = max(num / base**s) per exponent, then the pair
    (K, s) with minimal K taken at the largest s in the argmin set."""
    nums = np.asarray(nums, dtype=float)
    bases = np.asarray(bases, dtype=float)
    keep = (nums > 0) & (bases > 0)
    s_grid = np.asarray(sorted(grid_exponents))
    if not keep.any():
        return 1.0, float(s_grid[-1])
    ln = np.log(nums[keep])
    lb = np.log(bases[keep])
    # K(s) = exp(max(ln - s*lb)); K is nondecreasing in s since lb <= 0
    K = np.exp(np.max(ln[None, :] - s_grid[:, None] * lb[None, :], axis=1))
    K = np.maximum(K, 1.0)
    k_min = K.min()
    feasible = K <= k_min * (1 + _RTOL)
    i = int(np.max(np.flatnonzero(feasible)))
    return float(K[i]), float(s_grid[i])


DEFAULT_EXPONENT_GRID = np.linspace(0.01, 1.0, 100)


# ----------------------------------------------------------------------
# averaged-product and comparison constants
# ----------------------------------------------------------------------

def ap_constant(omega: WeightField, p: float, balls: BallFamily,
                witness_out: dict = None) -> float:
    """max over balls of (avg w)^(1/p) * (avg w^(-1/(p-1)))^((p-1)/p)."""
    if p <= 1:
        raise BadExponents("p must exceed 1")
    grid = omega.grid
    best = 0.0
    for c, r, mask in balls.balls(grid):
        w = omega.values[mask]
        if np.any(w <= 0):
            raise NonPositiveWeight("weight must be positive on sampled balls")
        avg1 = w.mean()
        avg2 = np.mean(w ** (-1.0 / (p - 1.0)))
        val = float(avg1 ** (1.0 / p) * avg2 ** ((p - 1.0) / p))
        if val > best:
            best = val
            if witness_out is not None:
                witness_out.update(center=[float(v) for v in c], r=float(r))
    return best


def a_infty_params(omega: WeightField, balls: BallFamily, subset_samples: int,
                   seed=0, exponent_grid=DEFAULT_EXPONENT_GRID):
    """(K, sigma) with w(S)/w(B) <= K (|S|/|B|)^sigma over sampled S within B."""
    grid = omega.grid
    rng = np.random.default_rng(seed)
    nums, bases = [], []
    for _c, _r, mask in balls.balls(grid):
        w = omega.values[mask]
        if np.any(w <= 0):
            raise NonPositiveWeight("weight must be positive on sampled balls")
        wB = omega.measure(mask)
        nB = int(mask.sum())
        for sub in sample_subsets(mask, rng, subset_samples):
            if sub.size == 0:
                continue
            nums.append(np.sum(omega.values[sub]) * grid.cell_measure / wB)
            bases.append(sub.size / nB)
    return _largest_exponent_fit(nums, bases, exponent_grid)


def doubling_constant(omega: WeightField, balls: BallFamily,
                      on_escape="raise", witness_out: dict = None) -> float:
    """max over balls of w(2B)/w(B); raises when 2B escapes the box."""
    grid = omega.grid
    best = 0.0
    for c, r, mask in balls.balls(grid, require_inside=True, factor=2.0,
                                  on_escape=on_escape):
        big = grid.ball_mask(c, 2 * r)
        den = omega.measure(mask)
        num = omega.measure(big)
        if den <= 0:
            continue
        if num / den > best:
            best = num / den
            if witness_out is not None:
                witness_out.update(center=[float(v) for v in c], r=float(r))
    return best


def reverse_holder_fit(omega: WeightField, balls: BallFamily, delta_grid,
                       p: float = 2.0):
    """Largest delta for which both higher-integrability displays stay finite
    over the family, with its constant."""
    grid = omega.grid
    ball_values = []
    for _c, _r, mask in balls.balls(grid):
        w = omega.values[mask]
        if np.any(w <= 0):
            raise NonPositiveWeight("weight must be positive on sampled balls")
        ball_values.append(w)
    for delta in sorted(delta_grid, reverse=True):
        worst = 1.0
        ok = True
        with np.errstate(over="ignore", divide="ignore"):
            for w in ball_values:
                lhs1 = np.mean(w ** (1.0 + delta)) ** (1.0 / (1.0 + delta))
                rhs1 = np.mean(w)
                winv = w ** (-1.0 / (p - 1.0))
                lhs2 = np.mean(winv ** (1.0 + delta)) ** (1.0 / (1.0 + delta))
                rhs2 = np.mean(winv)
                vals = [lhs1 / rhs1, lhs2 / rhs2]
                if not np.all(np.isfinite(vals)):
                    ok = False
                    break
                worst = max(worst, *vals)
        if ok:
            return float(delta), float(worst)
    raise NoFeasibleDelta("no delta in the grid keeps both displays finite")


def pair_condition_constant(nu: WeightField, omega: WeightField, p: float,
                            q: float, alpha: float, balls: BallFamily,
                            witness_out: dict = None) -> float:
    """max over concentric pairs of
    (|Br|/|Brho|)^(alpha/n) (nu(Br)/nu(Brho))^(1/q) (w(Br)/w(Brho))^(-1/p)."""
    if p >= q:
        raise BadExponents("need p < q")
    grid = nu.grid
    n = grid.dim
    best = 0.0
    for c, r, rho, m_r, m_rho in balls.concentric_pairs(grid):
        frac = m_r.sum() / m_rho.sum()
        nu_ratio = nu.measure(m_r) / nu.measure(m_rho)
        om_ratio = omega.measure(m_r) / omega.measure(m_rho)
        if om_ratio <= 0 or nu_ratio < 0:
            continue
        val = float(frac ** (alpha / n) * nu_ratio ** (1.0 / q) * om_ratio ** (-1.0 / p))
        if val > best:
            best = val
            if witness_out is not None:
                witness_out.update(center=[float(v) for v in c],
                                   r=float(r), rho=float(rho))
    return best


def build_mu_lambda_abs(mu: WeightField, lam: WeightField, zero_tol=0.0) -> WeightField:
    """|mu| where mu != 0 (beyond zero_tol) and lambda where mu == 0."""
    if not np.all(lam.values > 0):
        raise NonPositiveLambda("lambda must be positive everywhere")
    is_zero = np.abs(mu.values) <= zero_tol
    vals = np.where(is_zero, lam.values, np.abs(mu.values))
    return WeightField(mu.grid, vals, kind="mu_lambda_abs")


# ----------------------------------------------------------------------
# sign partition and interface geometry
# ----------------------------------------------------------------------

@dataclass
class SignPartition:
    grid: GridDomain
    labels: np.ndarray                 # +1 / -1 / 0 per cell
    interface_midpoints: np.ndarray    # (nfaces, dim) face midpoints
    face_sides: np.ndarray             # (nfaces, 2) labels of the two sides
    face_cells: np.ndarray             # (nfaces, 2) flat cell indices
    component_counts: dict = field(default_factory=dict)

    _tree_cache: dict = field(default_factory=dict, repr=False)

    # cells per sign
    def cells(self, sign):
        return np.flatnonzero(self.labels == sign)

    def region_mask(self, sign):
        return self.labels == sign

    # interface face subsets: faces with the given sign on one side
    def face_mask(self, sign):
        return np.any(self.face_sides == sign, axis=1)

    def interface_cells(self, sign=None):
        """Cells touching an interface face; sign selects faces with that side."""
        mask = np.zeros(self.grid.ncells, dtype=bool)
        if self.interface_midpoints.size == 0:
            return mask
        fsel = np.ones(len(self.face_cells), dtype=bool) if sign is None else self.face_mask(sign)
        mask[self.face_cells[fsel].ravel()] = True
        return mask

    # ---- fattenings -----------------------------------------------------
    def eps_neighborhood(self, cell_mask, eps):
        """Cell-set fattening by center distance; eps == 0 returns the set."""
        out = np.asarray(cell_mask, dtype=bool).copy()
        if eps <= 0 or not out.any():
            return out
        key = ("cells", out.tobytes())
        tree = self._tree_cache.get(key)
        if tree is None:
            tree = cKDTree(self.grid.centers()[out])
            self._tree_cache[key] = tree
        d, _ = tree.query(self.grid.centers(), k=1)
        return out | (d < eps)

    def interface_fatten(self, eps, sign=None, face_sel=None):
        """Cells whose center lies within eps of an interface face midpoint.

        The interface is a measure-zero face set, so eps == 0 yields the
        empty cell set.  face_sel optionally restricts the face subset.
        """
        mask = np.zeros(self.grid.ncells, dtype=bool)
        if eps <= 0 or self.interface_midpoints.size == 0:
            return mask
        fsel = np.ones(len(self.face_cells), dtype=bool) if sign is None else self.face_mask(sign)
        if face_sel is not None:
            fsel = fsel & face_sel
        if not fsel.any():
            return mask
        tree = cKDTree(np.atleast_2d(self.interface_midpoints[fsel]))
        d, _ = tree.query(self.grid.centers(), k=1)
        return d < eps

    def faces_touching_ball(self, sign, center, radius):
        """Face subset of the sign-side interface whose sign-side cell lies in
        the ball (grid version of 'interface within the closed sign region')."""
        fsel = self.face_mask(sign)
        if not fsel.any():
            return fsel
        cent = self.grid.centers()
        c = np.atleast_1d(np.asarray(center, dtype=float))
        out = fsel.copy()
        rows = np.flatnonzero(fsel)
        for i in rows:
            cells = self.face_cells[i]
            sides = self.face_sides[i]
            own = cells[sides == sign]
            inside = False
            for cellidx in own:
                if np.sum((cent[cellidx] - c) ** 2) < radius**2:
                    inside = True
            out[i] = inside
        return out


def partition_and_interface(mu: WeightField, zero_tol: float = 0.0) -> SignPartition:
    grid = mu.grid
    v = mu.values
    labels = np.zeros(grid.ncells, dtype=np.int8)
    labels[v > zero_tol] = 1
    labels[v < -zero_tol] = -1

    mids, sides, cells = [], [], []
    for ia, ib, mid in grid.interior_faces():
        diff = labels[ia] != labels[ib]
        if diff.any():
            mids.append(mid[diff])
            sides.append(np.column_stack([labels[ia][diff], labels[ib][diff]]))
            cells.append(np.column_stack([ia[diff], ib[diff]]))
    if mids:
        mids = np.vstack(mids)
        sides = np.vstack(sides)
        cells = np.vstack(cells)
    else:
        mids = np.empty((0, grid.dim))
        sides = np.empty((0, 2), dtype=np.int8)
        cells = np.empty((0, 2), dtype=int)

    counts = {}
    shaped = labels.reshape(grid.shape)
    structure = ndimage.generate_binary_structure(grid.dim, 1)
    for sign, name in ((1, "plus"), (-1, "minus"), (0, "zero")):
        _, ncomp = ndimage.label(shaped == sign, structure=structure)
        counts[name] = int(ncomp)
    return SignPartition(grid, labels, mids, sides, cells, counts)


# ----------------------------------------------------------------------
# hypothesis (H.4) / (H.5) audits and the intrinsic height h
# ----------------------------------------------------------------------

@dataclass
class RegionDoublingReport:
    q: float                     # max finite doubling ratio over the three lines
    unbounded: bool              # some ratio was +inf (mass appears only in 2B)
    records: list                # (line, center, r, ratio)

    def __float__(self):
        return self.q


def region_doubling_constant(mu: WeightField, lam: WeightField, part: SignPartition,
                balls: BallFamily, on_escape="raise") -> RegionDoublingReport:
    """Doubling of mu+, mu-, lambda_0 with centers restricted per line.

    A center qualifies for a line when its cell lies in the closed sign region
    (region plus its interface cells), or when every sampled ball at it carries
    positive line mass: the latter admits true boundary points of thin regions
    whose rasterization does not touch the center cell.
    """
    grid = mu.grid
    lines = [
        ("mu_plus", mu.positive_part(),
         part.region_mask(1) | part.interface_cells(1)),
        ("mu_minus", mu.negative_part(),
         part.region_mask(-1) | part.interface_cells(-1)),
        ("lambda_0", lam.restricted(part.region_mask(0)),
         part.region_mask(0) | part.interface_cells(0)),
    ]
    records = []
    q = 0.0
    unbounded = False
    for name, w, allowed in lines:
        if not np.any(w.values > 0):
            continue
        per_center = {}
        for c, r, mask in balls.balls(grid, require_inside=True, factor=2.0,
                                      on_escape=on_escape):
            den = w.measure(mask)
            num = w.measure(grid.ball_mask(c, 2 * r))
            per_center.setdefault(tuple(c), []).append((r, den, num))
        for c, samples in per_center.items():
            in_region = allowed[grid.nearest_cell(np.asarray(c))]
            any_mass = any(den > 0 for _r, den, _num in samples)
            if not (in_region or any_mass):
                continue
            for r, den, num in samples:
                if den <= 0:
                    # meaningful only where the pre holds on the grid itself;
                    # below raster scale an empty rung is an artifact
                    if in_region and num > 0:
                        unbounded = True
                        records.append((name, c, r, float("inf")))
                    continue
                ratio = num / den
                records.append((name, c, r, ratio))
                q = max(q, ratio)
    return RegionDoublingReport(q=q, unbounded=unbounded, records=records)


def interface_measure_decay(part: SignPartition, eps_list):
    """Lebesgue measure of the eps-fattened interface per eps (nonincreasing)."""
    eps_sorted = sorted(eps_list, reverse=True)
    out = []
    for eps in eps_sorted:
        mask = part.interface_fatten(eps)
        out.append((float(eps), float(mask.sum()) * part.grid.cell_measure))
    return out


def h_of(x0, rho, mu_lambda_abs: WeightField, lam: WeightField) -> float:
    """Intrinsic height h = |mu|_lambda(B_rho) / lambda(B_rho)."""
    grid = lam.grid
    if not grid.ball_inside(x0, rho):
        raise BallEscapesDomain(f"ball ({x0}, {rho}) escapes the domain box")
    mask = grid.ball_mask(x0, rho)
    den = lam.measure(mask)
    if den <= 0:
        raise NonPositiveLambda("lambda measure vanished on the ball")
    return mu_lambda_abs.measure(mask) / den


def f_of(x0, rho, mu_lambda_abs, lam):
    return h_of(x0, rho, mu_lambda_abs, lam) * rho**2


def kappa_tau(mu_lambda_abs: WeightField, lam: WeightField, balls: BallFamily,
              subset_samples: int, seed=0, exponent_grid=DEFAULT_EXPONENT_GRID):
    """(kappa, tau) making both mutual-absolute-continuity displays hold on
    sampled (S, Q): each measure ratio bounded by kappa * (other ratio)^tau."""
    grid = lam.grid
    if not (np.all(mu_lambda_abs.values > 0) and np.all(lam.values > 0)):
        raise NonPositiveWeight("both fields must be positive")
    rng = np.random.default_rng(seed)
    nums, bases = [], []
    for _c, _r, mask in balls.balls(grid):
        mQ = mu_lambda_abs.measure(mask)
        lQ = lam.measure(mask)
        for sub in sample_subsets(mask, rng, subset_samples):
            if sub.size == 0:
                continue
            mS = np.sum(mu_lambda_abs.values[sub]) * grid.cell_measure
            lS = np.sum(lam.values[sub]) * grid.cell_measure
            # both displays feed one fit: num <= kappa * base^tau
            nums.append(lS / lQ)
            bases.append(mS / mQ)
            nums.append(mS / mQ)
            bases.append(lS / lQ)
    if not nums:
        raise NoFeasibleTau("no usable (S, Q) samples")
    kappa, tau = _largest_exponent_fit(nums, bases, exponent_grid)
    return kappa, tau


def reduced_pair_parameters(K2: float, q: float, c_rh_nu: float, delta_nu: float, n: int,
              delta: float = None):
    """Derived pair-condition parameters (alpha, q_tilde, K2_tilde) obtained by
    trading decay of the first factor against the measured reverse-Holder
    exponent of the first weight."""
    if q <= 2:
        raise InfeasibleChain("need q > 2")
    sigma = delta_nu / (1.0 + delta_nu)
    if delta is None:
        delta = 0.5 * (0.5 - 1.0 / q)
        if sigma > 0:
            delta = min(delta, 0.9 / (n * sigma))
    if not (0 < delta and 1.0 / q + delta < 0.5):
        raise InfeasibleChain("no admissible delta: need 1/q + delta < 1/2")
    q_tilde = 1.0 / (1.0 / q + delta)
    alpha = 1.0 - n * sigma * delta
    if not (0 < alpha <= 1):
        raise InfeasibleChain("derived alpha left (0, 1]")
    K2_tilde = c_rh_nu**delta * K2
    return float(alpha), float(q_tilde), float(K2_tilde)


# ----------------------------------------------------------------------
# audit bundle
# ----------------------------------------------------------------------

@dataclass
class ProblemWeights:
    """The weights of one problem plus everything derived from their signs."""

    mu: WeightField
    lam: WeightField
    mula: WeightField
    part: SignPartition

    @classmethod
    def from_mu_lambda(cls, mu: WeightField, lam: WeightField, zero_tol=0.0):
        return cls(mu=mu, lam=lam,
                   mula=build_mu_lambda_abs(mu, lam, zero_tol=zero_tol),
                   part=partition_and_interface(mu, zero_tol=zero_tol))

    @property
    def grid(self):
        return self.mu.grid

    def mu_plus(self):
        return self.mu.positive_part()

    def mu_minus(self):
        return self.mu.negative_part()

    def lam_sign(self, sign):
        return self.lam.restricted(self.part.region_mask(sign))

    def h(self, x0, rho):
        return h_of(x0, rho, self.mula, self.lam)


@dataclass
class WeightAudit:
    K1: float = None
    K2: float = None
    q: float = None
    K3: float = None
    sigma: float = None
    c_d: dict = field(default_factory=dict)
    c_rh: float = None
    delta: float = None
    region_doubling: float = None
    doubling_unbounded: bool = False
    h5: list = field(default_factory=list)
    kappa: float = None
    tau: float = None
    alpha: float = None
    q_tilde: float = None
    K2_tilde: float = None
    family_size: int = 0
    witness: dict = field(default_factory=dict)

    def to_records(self):
        recs = []
        for name in ("K1", "K2", "q", "K3", "sigma", "c_rh", "delta", "region_doubling",
                     "kappa", "tau", "alpha", "q_tilde", "K2_tilde"):
            v = getattr(self, name)
            if v is not None:
                recs.append({"name": name, "value": v,
                             "witness_ball": self.witness.get(name),
                             "family_size": self.family_size})
        for wname, v in self.c_d.items():
            recs.append({"name": f"c_d({wname})", "value": v,
                         "witness_ball": None, "family_size": self.family_size})
        for eps, m in self.h5:
            recs.append({"name": "h5", "value": m, "witness_ball": eps,
                         "family_size": self.family_size})
        return recs


def run_weight_audit(mu: WeightField, lam: WeightField, balls: BallFamily,
                     q: float = 4.0, subset_samples: int = 24,
                     eps_list=(0.2, 0.1, 0.05, 0.025), zero_tol: float = 0.0,
                     delta_grid=(0.05, 0.1, 0.2, 0.4, 0.8), seed=0,
                     doubling_balls: BallFamily = None) -> WeightAudit:
    """Full hypothesis audit: averaged-product, pair and comparison constants,
    doubling lines, and interface decay."""
    audit = WeightAudit()
    mula = build_mu_lambda_abs(mu, lam, zero_tol=zero_tol)
    part = partition_and_interface(mu, zero_tol=zero_tol)
    n = lam.grid.dim

    audit.family_size = sum(1 for _ in balls.balls(lam.grid))
    for name in ("K1", "K2", "K3", "kappa"):
        audit.witness[name] = {}
    audit.K1 = ap_constant(lam, 2.0, balls, witness_out=audit.witness["K1"])
    audit.q = q
    audit.K2 = pair_condition_constant(mula, lam, 2.0, q, 1.0, balls,
                                       witness_out=audit.witness["K2"])
    audit.K3, audit.sigma = a_infty_params(mula, balls, subset_samples, seed=seed)
    audit.c_d["lambda"] = doubling_constant(lam, balls, on_escape="skip")
    audit.c_d["mu_lambda_abs"] = doubling_constant(mula, balls, on_escape="skip")
    audit.delta, audit.c_rh = reverse_holder_fit(mula, balls, delta_grid)
    h4 = region_doubling_constant(mu, lam, part, doubling_balls if doubling_balls is not None else balls,
                     on_escape="skip")
    audit.region_doubling = h4.q
    audit.doubling_unbounded = h4.unbounded
    audit.h5 = interface_measure_decay(part, eps_list)
    audit.kappa, audit.tau = kappa_tau(mula, lam, balls, subset_samples, seed=seed)
    try:
        audit.alpha, audit.q_tilde, audit.K2_tilde = reduced_pair_parameters(
            audit.K2, q, audit.c_rh, audit.delta, n)
    except InfeasibleChain:
        pass
    return audit
