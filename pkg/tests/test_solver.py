import numpy as np
import pytest

import mixlab.solver as solver_mod
from mixlab.errors import DegenerateTest, NonConvergence
from mixlab.fields import SpaceTimeField
from mixlab.grid import GridDomain
from mixlab.scenarios import bundled_path, list_bundled, load_scenario
from mixlab.solver import (
    Scenario,
    assemble,
    dirichlet_energy,
    make_bump_bank,
    qmin_ratio,
    solve,
    structure_condition_check,
)
from mixlab.weights import WeightField, constant_field


def heat_scenario(nx, nt, T=0.25):
    g = GridDomain(dim=1, origin=(0.0,), extent=(1.0,), shape=(nx,),
                   time_steps=nt, dt=T / nt)
    x = g.centers()[:, 0]
    return Scenario(grid=g, mu=constant_field(g, 1.0, "mu"),
                    lam=constant_field(g, 1.0, "lambda"),
                    dirichlet=0.0, data_plus=np.sin(np.pi * x))


def heat_exact(g):
    x = g.centers()[:, 0]
    t = g.times()
    return np.exp(-np.pi**2 * t)[None, :] * np.sin(np.pi * x)[:, None]


def test_heat_matches_analytic():
    sc = heat_scenario(64, 256)
    u, rep = solve(sc)
    assert rep.residual_norm <= 1e-10
    assert np.max(np.abs(u.values - heat_exact(sc.grid))) < 2.5e-3


def test_heat_second_order_convergence():
    errs = []
    for nx in (16, 32, 64):
        nt = nx * nx // 4  # dt ~ dx^2
        sc = heat_scenario(nx, nt)
        u, _ = solve(sc)
        errs.append(np.max(np.abs(u.values - heat_exact(sc.grid))))
    for e0, e1 in zip(errs, errs[1:]):
        assert 3.2 <= e0 / e1 <= 4.8


def test_harmonic_slices_exact():
    g = GridDomain(dim=1, origin=(0.0,), extent=(1.0,), shape=(32,),
                   time_steps=8, dt=0.01)
    sc = Scenario(grid=g, mu=constant_field(g, 0.0, "mu"),
                  lam=constant_field(g, 1.0, "lambda"),
                  dirichlet=lambda pts, t: pts[:, 0])
    u, rep = solve(sc)
    assert np.max(np.abs(u.values - g.centers()[:, 0][:, None])) < 1e-12
    assert rep.residual_norm <= 1e-10


def test_forward_backward_sign_scenario():
    g = GridDomain(dim=1, origin=(-1.0,), extent=(2.0,), shape=(64,),
                   time_steps=64, dt=0.25 / 64)
    x = g.centers()[:, 0]
    sc = Scenario(grid=g, mu=WeightField(g, np.sign(x), "mu"),
                  lam=constant_field(g, 1.0, "lambda"), dirichlet=1.0,
                  data_plus=1.0 + 0.5 * np.cos(np.pi * x),
                  data_minus=1.0 + 0.2 * np.cos(np.pi * x))
    u, rep = solve(sc)
    assert rep.residual_norm <= 1e-10
    # imposed data exactly
    plus = sc.mu.values > 0
    assert np.array_equal(u.values[plus, 0], sc.data_plus[plus])
    minus = sc.mu.values < 0
    assert np.array_equal(u.values[minus, -1], sc.data_minus[minus])


def test_time_reversal_symmetry_exact():
    g = GridDomain(dim=1, origin=(-1.0,), extent=(2.0,), shape=(48,),
                   time_steps=40, dt=0.2 / 40)
    x = g.centers()[:, 0]
    dp = 1.0 + 0.5 * np.cos(np.pi * x)
    dm = 1.0 + 0.2 * np.sin(np.pi * x) ** 2
    mu = WeightField(g, np.sign(x), "mu")
    lam = WeightField(g, 1.0 + 0.25 * np.abs(x), "lambda")
    u1, _ = solve(Scenario(grid=g, mu=mu, lam=lam, dirichlet=1.0,
                           data_plus=dp, data_minus=dm))
    mu2 = WeightField(g, -np.sign(x), "mu")
    u2, _ = solve(Scenario(grid=g, mu=mu2, lam=lam, dirichlet=1.0,
                           data_plus=dm, data_minus=dp))
    assert np.max(np.abs(u2.values - u1.values[:, ::-1])) < 1e-12


def test_discrete_maximum_principle_pure_forward():
    rng = np.random.default_rng(11)
    g = GridDomain(dim=1, origin=(0.0,), extent=(1.0,), shape=(40,),
                   time_steps=60, dt=0.3 / 60)
    data = 1.0 + rng.uniform(0, 1, g.ncells)
    sc = Scenario(grid=g, mu=constant_field(g, 1.0, "mu"),
                  lam=WeightField(g, 1.0 + 0.5 * g.centers()[:, 0], "lambda"),
                  dirichlet=1.5, data_plus=data)
    u, _ = solve(sc)
    lo, hi = min(1.5, data.min()), max(1.5, data.max())
    assert u.values.min() >= lo - 1e-10
    assert u.values.max() <= hi + 1e-10


def test_march_gmres_matches_direct():
    sc = load_scenario(bundled_path("cross")).scenario
    old = solver_mod._DIRECT_LIMIT
    try:
        solver_mod._DIRECT_LIMIT = 1
        u_march, rep = solve(sc)
        assert rep.iterations > 0
        solver_mod._DIRECT_LIMIT = 10**9
        u_direct, _ = solve(sc)
    finally:
        solver_mod._DIRECT_LIMIT = old
    assert np.max(np.abs(u_march.values - u_direct.values)) < 1e-10


def test_all_bundled_scenarios_residuals():
    for name in list_bundled():
        sc = load_scenario(bundled_path(name))
        if sc.scenario is None:
            continue
        _u, rep = solve(sc.scenario)
        assert rep.residual_norm <= 1e-10, name


def test_initial_both_placement_is_ill_conditioned_diagnostic():
    g = GridDomain(dim=1, origin=(-1.0,), extent=(2.0,), shape=(32,),
                   time_steps=32, dt=0.25 / 32)
    x = g.centers()[:, 0]
    kw = dict(grid=g, mu=WeightField(g, np.sign(x), "mu"),
              lam=constant_field(g, 1.0, "lambda"), dirichlet=1.0,
              data_plus=1.0 + 0.5 * np.cos(np.pi * x),
              data_minus=1.0 + 0.2 * np.cos(np.pi * x))
    with pytest.raises(NonConvergence):
        solve(Scenario(**kw, data_placement="initial_both"))
    _u, rep = solve(Scenario(**kw, data_placement="initial_both"), strict=False)
    ok = solve(Scenario(**kw))[1]
    # the both-data-at-t0 reading blows the residual up by many orders
    assert rep.residual_norm > 1e6 * ok.residual_norm


# ----------------------------------------------------------------------
# quasi-minimality
# ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def heat128():
    sc = heat_scenario(128, 128)
    u, _ = solve(sc)
    return sc, u


def test_qmin_near_one_on_solution(heat128):
    sc, u = heat128
    bank = make_bump_bank(sc.grid, 20, seed=1, amplitude=1e-3)
    q = qmin_ratio(u, sc, bank)
    assert 0.9 <= q <= 1.1


def test_qmin_skips_zero_tests(heat128):
    sc, u = heat128
    zero = SpaceTimeField(sc.grid, np.zeros_like(u.values))
    bank = [zero] + make_bump_bank(sc.grid, 3, seed=2, amplitude=1e-3)
    q = qmin_ratio(u, sc, bank)
    assert 0.9 <= q <= 1.1
    with pytest.raises(DegenerateTest):
        qmin_ratio(u, sc, [zero])


def test_qmin_flags_perturbed_non_solution(heat128):
    sc, u = heat128
    bump = make_bump_bank(sc.grid, 1, seed=3, amplitude=0.5)[0]
    bank = [bump] + make_bump_bank(sc.grid, 5, seed=4, amplitude=0.5)
    perturbed = SpaceTimeField(sc.grid, u.values + bump.values)
    q = qmin_ratio(perturbed, sc, bank)
    assert q > 1.5


def test_dirichlet_energy_scaling(heat128):
    sc, u = heat128
    mask = np.ones((sc.grid.ncells, sc.grid.n_levels), dtype=bool)
    e1 = dirichlet_energy(u, sc.lam, mask)
    e2 = dirichlet_energy(u.scaled(2.0), sc.lam, mask)
    assert e2 == pytest.approx(4 * e1, rel=1e-12)


# ----------------------------------------------------------------------
# structure conditions
# ----------------------------------------------------------------------

def test_structure_conditions():
    g = GridDomain(dim=2, origin=(0.0, 0.0), extent=(1.0, 1.0), shape=(8, 8))
    lam = constant_field(g, 1.0, "lambda")
    rng = np.random.default_rng(0)
    Du = rng.normal(size=(g.ncells, 2))
    A = lam.values[:, None] * Du
    B = np.zeros(g.ncells)
    res = structure_condition_check(A, B, Du, lam, L=1.0, M=1.0)
    assert res["ok"]
    res2 = structure_condition_check(2 * A, B, Du, lam, L=1.0, M=1.0)
    assert not res2["flux_growth"]
    assert structure_condition_check(2 * A, B, Du, lam, L=2.0, M=1.0)["ok"]
    rot = np.column_stack([-A[:, 1], A[:, 0]])
    res3 = structure_condition_check(rot, B, Du, lam, L=2.0, M=1.0)
    assert not res3["coercive"]


def test_assemble_counts():
    sc = heat_scenario(16, 8)
    A, b, meta = assemble(sc)
    assert A.shape == (16 * 9, 16 * 9)
    assert meta["data_rows"].size == 16
