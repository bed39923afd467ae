import numpy as np
import pytest

from mixlab.degiorgi import (
    CylinderSets,
    CylinderSpec,
    build_cylinders,
    iteration_prefactor,
    default_sweep,
    energy_sides,
    gamma_fit,
    k_ladder,
    linfty_check,
    suggested_truncation_step,
    truncation_iteration_trace,
)
from mixlab.errors import CylinderEscapes, EmptyCylinder
from mixlab.fields import SpaceTimeField
from mixlab.grid import GridDomain
from mixlab.scenarios import bundled_path, load_scenario
from mixlab.solver import Scenario, solve
from mixlab.weights import ProblemWeights, constant_field

from conftest import solved_bundled


def unit_pw(g):
    return ProblemWeights.from_mu_lambda(constant_field(g, 1.0, "mu"),
                                         constant_field(g, 1.0, "lambda"))


def heat_problem(nx=64, nt=128):
    g = GridDomain(dim=1, origin=(0.0,), extent=(1.0,), shape=(nx,),
                   time_steps=nt, dt=0.5 / nt)
    x = g.centers()[:, 0]
    sc = Scenario(grid=g, mu=constant_field(g, 1.0, "mu"),
                  lam=constant_field(g, 1.0, "lambda"),
                  dirichlet=0.0, data_plus=np.sin(np.pi * x))
    u, _ = solve(sc)
    return g, u, unit_pw(g)


def test_cylinder_spec_validation():
    with pytest.raises(ValueError):
        CylinderSpec(x0=(0.5,), t0=0.1, R=0.2, r=0.15, r_tilde=0.1)
    with pytest.raises(ValueError):
        CylinderSpec(x0=(0.5,), t0=0.1, R=0.2, r=0.05, r_tilde=0.199, theta=0.3)
    s = CylinderSpec(x0=(0.5,), t0=0.1, R=0.2, r=0.1, r_tilde=0.15, theta=0.5)
    assert s.theta_tilde == pytest.approx(0.5 - 0.0625)


def test_cylinder_escapes():
    g = GridDomain(dim=1, origin=(0.0,), extent=(1.0,), shape=(32,),
                   time_steps=16, dt=0.01)
    pw = unit_pw(g)
    with pytest.raises(CylinderEscapes):
        CylinderSets(CylinderSpec(x0=(0.95,), t0=0.05, R=0.2, r=0.1,
                                  r_tilde=0.15), pw)
    with pytest.raises(CylinderEscapes):
        CylinderSets(CylinderSpec(x0=(0.5,), t0=0.15, R=0.2, r=0.1,
                                  r_tilde=0.15, beta=1.0), pw)


def test_cylinder_sets_all_plus_shortcut():
    g = GridDomain(dim=1, origin=(0.0,), extent=(1.0,), shape=(64,),
                   time_steps=100, dt=0.01)
    pw = unit_pw(g)
    sets = CylinderSets(CylinderSpec(x0=(0.5,), t0=0.2, R=0.3, r=0.15,
                                     r_tilde=0.22, beta=1.0, theta=0.5), pw)
    # interfaces empty, the signed cylinder is the full ball x window
    q = sets.q_signed(1, 0.15, 0.5, 0.0)
    win = g.window_steps(0.2 + sets.sigma(0.5), sets.s2)
    ball = g.ball_mask((0.5,), 0.15)
    assert q[:, win[0]].sum() == ball.sum()
    assert not q[:, win[0] - 1].any()
    in_f, out_f = sets.interface_split(1, 0.15, 0.05)
    assert not in_f.any() and not out_f.any()


def test_cylinder_sets_cross_restriction():
    sc = load_scenario(bundled_path("cross"))
    pw = sc.weights()
    g = sc.grid
    sets = CylinderSets(CylinderSpec(x0=(0.0, 0.0), t0=0.125, R=0.3, r=0.15,
                                     r_tilde=0.22, beta=1.0, theta=0.5), pw)
    q = sets.q_signed(1, 0.15, 0.5, 0.0)
    cells = np.flatnonzero(q.any(axis=1))
    c = g.centers()[cells]
    # positive quadrants only (sign(xy) = +1)
    assert np.all(c[:, 0] * c[:, 1] > 0)


def test_cylinder_full_window_at_zero_theta():
    g = GridDomain(dim=1, origin=(0.0,), extent=(1.0,), shape=(64,),
                   time_steps=100, dt=0.01)
    pw = unit_pw(g)
    sets = CylinderSets(CylinderSpec(x0=(0.5,), t0=0.2, R=0.3, r=0.15,
                                     r_tilde=0.22, beta=1.0, theta=0.5), pw)
    q0 = sets.q_signed(1, 0.15, 0.0, 0.0)
    steps = np.flatnonzero(q0.any(axis=0))
    assert steps[0] == g.window_steps(0.2, sets.s2)[0]


def test_fattening_monotone():
    sc = load_scenario(bundled_path("cross"))
    pw = sc.weights()
    sets = CylinderSets(CylinderSpec(x0=(0.0, 0.0), t0=0.125, R=0.3, r=0.15,
                                     r_tilde=0.22, beta=1.0, theta=0.5), pw)
    q0 = sets.q_signed(1, 0.15, 0.5, 0.0)
    q1 = sets.q_signed(1, 0.15, 0.5, 0.05)
    q2 = sets.q_signed(1, 0.15, 0.5, 0.1)
    assert np.all(q1 | q0 == q1)
    assert np.all(q2 | q1 == q2)


def test_build_cylinders_ladders():
    g = GridDomain(dim=1, origin=(0.0,), extent=(1.0,), shape=(64,),
                   time_steps=100, dt=0.01)
    pw = unit_pw(g)
    out = build_cylinders((0.5,), 0.2, 0.3, 1.0, (0.3, 0.5), (0.0, 0.04),
                          "plus", pw)
    assert len(out) == 4


def test_energy_sides_trivial_truncations():
    g, u, pw = heat_problem(32, 32)
    sets = CylinderSets(CylinderSpec(x0=(0.5,), t0=0.1, R=0.2, r=0.1,
                                     r_tilde=0.15, beta=1.0, theta=0.5), pw)
    const = SpaceTimeField(g, np.full((g.ncells, g.n_levels), 3.0))
    with pytest.raises(EmptyCylinder):
        energy_sides(const, 3.0, sets, "+")
    with pytest.raises(EmptyCylinder):
        energy_sides(u, 2.0, sets, "+")  # k above max u


def test_energy_sides_heat_positive():
    g, u, pw = heat_problem()
    sets = CylinderSets(CylinderSpec(x0=(0.5,), t0=0.05, R=0.2, r=0.1,
                                     r_tilde=0.15, beta=1.0, theta=0.5), pw)
    lhs, rhs = energy_sides(u, 0.1, sets, "+")
    assert lhs > 0 and rhs > 0
    assert np.isfinite(lhs / rhs)


def test_energy_scaling_covariance():
    g, u, pw = heat_problem(32, 64)
    sets = CylinderSets(CylinderSpec(x0=(0.5,), t0=0.05, R=0.2, r=0.1,
                                     r_tilde=0.15, beta=1.0, theta=0.5), pw)
    l1, r1 = energy_sides(u, 0.1, sets, "+")
    l2, r2 = energy_sides(u.scaled(3.0), 0.3, sets, "+")
    assert l2 == pytest.approx(9 * l1, rel=1e-12)
    assert r2 == pytest.approx(9 * r1, rel=1e-12)


def test_energy_shift_covariance():
    g, u, pw = heat_problem(32, 64)
    sets = CylinderSets(CylinderSpec(x0=(0.5,), t0=0.05, R=0.2, r=0.1,
                                     r_tilde=0.15, beta=1.0, theta=0.5), pw)
    l1, r1 = energy_sides(u, 0.1, sets, "+")
    l2, r2 = energy_sides(u.shifted(0.7), 0.8, sets, "+")
    assert l2 == pytest.approx(l1, rel=1e-12)
    assert r2 == pytest.approx(r1, rel=1e-12)


def test_display_iv_and_v_sides():
    sc = load_scenario(bundled_path("sgn_x"))
    field, _ = solve(sc.scenario)
    pw = sc.weights()
    g = sc.grid
    for kind, sign_r in (("plus_free", 1), ("minus_free", -1)):
        spec = CylinderSpec(x0=(0.0,), t0=0.125, R=0.3, r=0.15, r_tilde=0.22,
                            beta=1.0, kind=kind,
                            s2=0.2 if kind == "plus_free" else None,
                            s1=0.05 if kind == "minus_free" else None)
        sets = CylinderSets(spec, pw)
        lhs, (rhs_free, rhs_gamma) = energy_sides(field, 1.0, sets, "+")
        assert lhs >= 0 and rhs_free >= 0 and rhs_gamma >= 0


def test_gamma_fit_constant_convention():
    g, _u, pw = heat_problem(32, 32)
    const = SpaceTimeField(g, np.full((g.ncells, g.n_levels), 2.0))
    sweep = default_sweep(pw, (0.5,), 0.08, 0.2)
    rep = gamma_fit(const, sweep)
    assert rep.gamma == 1.0
    assert rep.records == []
    assert rep.verdict() == "DG"


def test_gamma_fit_heat_stable_under_refinement():
    g1, u1, pw1 = heat_problem(64, 128)
    g2, u2, pw2 = heat_problem(128, 512)
    r1 = gamma_fit(u1, default_sweep(pw1, (0.5,), 0.1, 0.2))
    r2 = gamma_fit(u2, default_sweep(pw2, (0.5,), 0.1, 0.2))
    assert np.isfinite(r1.gamma) and np.isfinite(r2.gamma)
    ratio = r2.gamma / r1.gamma
    assert ratio <= 1.5


def jump_field(g):
    x = g.centers()[:, 0]
    tj = g.n_levels // 2
    vals = np.zeros((g.ncells, g.n_levels))
    vals[:, tj:] = np.maximum(0.0, 1 - ((x - 0.5) / 0.3) ** 2)[:, None]
    return SpaceTimeField(g, vals), g.dt * (tj - 1), g.dt * (tj + 1)


def test_gamma_fit_temporal_jump_control_grows():
    gammas = []
    for nx, nt in ((64, 128), (128, 512)):
        g = GridDomain(dim=1, origin=(0.0,), extent=(1.0,), shape=(nx,),
                       time_steps=nt, dt=0.5 / nt)
        pw = unit_pw(g)
        ju, ta, tb = jump_field(g)
        spec = CylinderSpec(x0=(0.5,), t0=ta, R=0.2, r=0.1, r_tilde=0.15,
                            beta=1.0, kind="plus_free", s2=tb)
        rep = gamma_fit(ju, [CylinderSets(spec, pw)],
                        k_levels=[0.1, 0.2, 0.4])
        gammas.append(rep.gamma)
    assert gammas[1] >= 3.0 * gammas[0]


def test_k_ladder_spans_range():
    g, u, _pw = heat_problem(32, 32)
    ks = k_ladder(u)
    assert len(ks) == 16
    assert min(ks) >= u.values.min()
    assert max(ks) <= u.values.max()


# ----------------------------------------------------------------------
# local boundedness
# ----------------------------------------------------------------------

def test_linfty_constant_field():
    g, _u, pw = heat_problem(32, 64)
    const = SpaceTimeField(g, np.ones((g.ncells, g.n_levels)))
    ess, rhs, c_inf = linfty_check(const, (0.5,), 0.1, 0.2, 1.0, "i", pw)
    assert ess == 1.0
    # both normalized energies equal 1, so the bracket is sqrt(2)
    assert rhs == pytest.approx(np.sqrt(2.0), rel=1e-9)
    assert c_inf == pytest.approx(1 / np.sqrt(2.0), rel=1e-9)


def test_linfty_heat_finite_and_stable():
    vals = []
    for nx, nt in ((64, 128), (128, 512)):
        g = GridDomain(dim=1, origin=(0.0,), extent=(1.0,), shape=(nx,),
                       time_steps=nt, dt=0.5 / nt)
        x = g.centers()[:, 0]
        sc = Scenario(grid=g, mu=constant_field(g, 1.0, "mu"),
                      lam=constant_field(g, 1.0, "lambda"),
                      dirichlet=0.0, data_plus=np.sin(np.pi * x))
        u, _ = solve(sc)
        pw = unit_pw(g)
        _e, _r, c_inf = linfty_check(u, (0.5,), 0.1, 0.2, 1.0, "i", pw)
        vals.append(c_inf)
    assert all(np.isfinite(v) for v in vals)
    assert abs(vals[1] - vals[0]) <= 0.25 * vals[0]


def test_linfty_case_iii_elliptic_family():
    sc, u, _rep = solved_bundled("elliptic_family")
    pw = sc.weights()
    ess, rhs, c_inf = linfty_check(u, (0.5,), 0.25, 0.3, 1.0, "iii", pw)
    assert np.isfinite(c_inf) and c_inf > 0


# ----------------------------------------------------------------------
# truncation iteration trace
# ----------------------------------------------------------------------

def test_trace_zero_field():
    g, _u, pw = heat_problem(32, 64)
    zero = SpaceTimeField(g, np.zeros((g.ncells, g.n_levels)))
    out = truncation_iteration_trace(zero, 0.0, 1.0, 0.2, (0.5,), 0.1, 1.0, pw)
    assert all(v == 0 for v in out["trace"])
    assert out["nonincreasing"]


def test_trace_heat_with_suggested_truncation_step():
    g, u, pw = heat_problem()
    gamma, gamma1, kappa = 1.0, 1.0, 1.5
    spec = CylinderSpec(x0=(0.5,), t0=0.1, R=0.2, r=0.1, r_tilde=0.15,
                        beta=1.0, theta=0.5)
    sets = CylinderSets(spec, pw)
    from mixlab.degiorgi import _normalized_truncation_energy
    u0 = np.sqrt(_normalized_truncation_energy(u, 0.0, sets, 1, 0.1, 0.0, 0.1))
    d = suggested_truncation_step(u0, gamma, gamma1, kappa, 1.0)
    out = truncation_iteration_trace(u, 0.0, d, 0.2, (0.5,), 0.1, 1.0, pw,
                                     n_steps=12, gamma=gamma, gamma1=gamma1,
                                     kappa=kappa)
    assert out["nonincreasing"]
    assert out["smallness_holds"]
    assert out["trace"][-1] < 1e-8


def test_trace_huge_d_hits_zero():
    g, u, pw = heat_problem(32, 64)
    out = truncation_iteration_trace(u, 0.0, 100.0, 0.2, (0.5,), 0.1, 1.0, pw,
                                     n_steps=6)
    assert out["trace"][-1] == 0.0


def test_c_plus_monotone_in_gamma():
    assert iteration_prefactor(2.0, 1.0, 1.5, 1.0) > iteration_prefactor(1.0, 1.0, 1.5, 1.0)


def test_energy_sides_monotone_in_fattening():
    sc = load_scenario(bundled_path("sgn_x"))
    field, _ = solve(sc.scenario)
    pw = sc.weights()
    prev_l = prev_r = -1.0
    for eps in (0.0, 0.02, 0.04):
        spec = CylinderSpec(x0=(0.3,), t0=0.125, R=0.25, r=0.125, r_tilde=0.19,
                            beta=1.0, theta=0.5, eps=eps)
        lhs, rhs = energy_sides(field, 1.0, CylinderSets(spec, pw), "+")
        assert lhs >= prev_l - 1e-12 and rhs >= prev_r - 1e-12
        prev_l, prev_r = lhs, rhs
