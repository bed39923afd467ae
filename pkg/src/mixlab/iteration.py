"""Fast-geometric-convergence recursions, run at their extremal equality.

The recursions bound arbitrary admissible sequences, so iterating the equality
case dominates them all; convergence of the extremal run machine-checks the
stated conclusion.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ThresholdViolated

CONV_TOL = 1e-8
DIVERGE_CAP = 1e12


@dataclass(frozen=True)
class GeomIterParams:
    c: float
    b: float
    alpha: float

    def __post_init__(self):
        if not (self.c > 0 and self.b > 1 and self.alpha > 0):
            raise ValueError("need c > 0, b > 1, alpha > 0")


@dataclass
class IterationResult:
    values: list
    converged: bool
    diverged: bool
    first_exceed_index: int = None   # first h >= 1 with y_h > y_0
    stalled: bool = False            # stopped decreasing above tolerance


def smallness_threshold(params: GeomIterParams) -> float:
    """Smallness threshold c^(-1/alpha) * b^(-1/alpha^2)."""
    a = params.alpha
    return params.c ** (-1.0 / a) * params.b ** (-1.0 / a**2)


def iterate_extremal(params: GeomIterParams, y0: float, N: int) -> IterationResult:
    """Equality recursion y_{h+1} = c * b^h * y_h^(1+alpha)."""
    if y0 <= 0 or N < 1:
        raise ValueError("need y0 > 0 and N >= 1")
    c, b, a = params.c, params.b, params.alpha
    ys = [float(y0)]
    first_exceed = None
    diverged = False
    for h in range(N):
        y = c * b**h * ys[-1] ** (1.0 + a)
        if y > DIVERGE_CAP:
            ys.append(DIVERGE_CAP)
            diverged = True
            if first_exceed is None:
                first_exceed = h + 1
            break
        ys.append(y)
        if first_exceed is None and y > y0:
            first_exceed = h + 1
            diverged = True
    converged = (not diverged) and ys[-1] < CONV_TOL
    return IterationResult(ys, converged, diverged, first_exceed)


@dataclass
class PerturbedSequenceSpec:
    """Nonnegative perturbations with limit zero.

    kind: 'geometric' (scale * q^h), 'power' (scale * (h+1)^-s) or 'custom'
    (explicit list, extended by zero).
    """

    kind: str = "geometric"
    q: float = 0.5
    s: float = 1.0
    scale: float = 0.0
    custom: list = None

    def value(self, h):
        if self.kind == "geometric":
            return self.scale * self.q**h
        if self.kind == "power":
            return self.scale * (h + 1.0) ** (-self.s)
        if self.kind == "custom":
            seq = self.custom or []
            return float(seq[h]) if h < len(seq) else 0.0
        raise ValueError(f"unknown perturbation kind {self.kind!r}")


def iterate_perturbed(params: GeomIterParams, y0: float,
                      spec: PerturbedSequenceSpec, N: int) -> IterationResult:
    """Clamped extremal recursion y_{h+1} = min(y_h, c b^h (y_h + eps_h) y_h^alpha).

    Requires y0 strictly below the smallness threshold.
    """
    th = smallness_threshold(params)
    if y0 >= th:
        raise ThresholdViolated(f"y0 = {y0:g} is not below the threshold {th:g}")
    if y0 <= 0 or N < 1:
        raise ValueError("need y0 > 0 and N >= 1")
    c, b, a = params.c, params.b, params.alpha
    ys = [float(y0)]
    for h in range(N):
        y = min(ys[-1], c * b**h * (ys[-1] + spec.value(h)) * ys[-1] ** a)
        ys.append(y)
    converged = ys[-1] < CONV_TOL
    stalled = (not converged) and ys[-1] > 0.5 * ys[max(0, len(ys) - 20)]
    return IterationResult(ys, converged, diverged=False, stalled=stalled)
