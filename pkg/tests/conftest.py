import pytest

from mixlab.grid import GridDomain
from mixlab.scenarios import bundled_path, dump_toml, load_scenario
from mixlab.solver import solve
from mixlab.weights import ProblemWeights, constant_field

_SOLVED = {}


def solved_bundled(name, refine_factor=1):
    """Session-cached solve of a bundled scenario (optionally refined)."""
    key = (name, refine_factor)
    if key not in _SOLVED:
        sc = load_scenario(bundled_path(name))
        if refine_factor != 1:
            raw = dict(sc.raw)
            raw["grid"] = dict(raw["grid"])
            raw["grid"]["shape"] = [refine_factor * int(v) for v in raw["grid"]["shape"]]
            raw["grid"]["time_steps"] = refine_factor * int(raw["grid"]["time_steps"])
            sc = load_scenario(dump_toml(raw))
        field, report = solve(sc.scenario)
        _SOLVED[key] = (sc, field, report)
    return _SOLVED[key]


@pytest.fixture(scope="session")
def heat_solution():
    return solved_bundled("heat")


@pytest.fixture(scope="session")
def cross_solution():
    return solved_bundled("cross")


@pytest.fixture
def grid1d():
    return GridDomain(dim=1, origin=(-1.0,), extent=(2.0,), shape=(1000,),
                      time_steps=4, dt=0.05)


@pytest.fixture
def unit_weights(grid1d):
    mu = constant_field(grid1d, 1.0, "mu")
    lam = constant_field(grid1d, 1.0, "lambda")
    return ProblemWeights.from_mu_lambda(mu, lam)
