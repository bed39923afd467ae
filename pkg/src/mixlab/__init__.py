"""mixlab: numerical laboratory for degenerate mixed-type evolution equations.

Solves  mu(x) u_t - div(lambda(x) grad u) = f  with sign-changing, possibly
vanishing mu, and verifies the quantitative machinery around it: Muckenhoupt
weight audits, truncation energy estimates, local boundedness, expansion of
positivity, Harnack-type ratios with intrinsic waiting times, and the derived
oscillation-decay and maximum-principle checks.
"""

from .fields import SpaceTimeField, SpatialField
from .grid import BallFamily, GridDomain, refine
from .solver import Scenario, SolveReport, solve
from .weights import ProblemWeights, WeightField

__all__ = [
    "BallFamily",
    "GridDomain",
    "ProblemWeights",
    "Scenario",
    "SolveReport",
    "SpaceTimeField",
    "SpatialField",
    "WeightField",
    "refine",
    "solve",
]

__version__ = "0.1.0"
