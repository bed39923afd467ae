"""Exception types shared across the package."""


class MixlabError(Exception):
    """Base class for all package errors."""


class NonPositiveWeight(MixlabError):
    pass


class NonPositiveLambda(MixlabError):
    pass


class EmptyFamily(MixlabError):
    pass


class BallEscapesDomain(MixlabError):
    pass


class NoFeasibleDelta(MixlabError):
    pass


class NoFeasibleTau(MixlabError):
    pass


class BadExponents(MixlabError):
    pass


class InfeasibleChain(MixlabError):
    pass


class ThresholdViolated(MixlabError):
    pass


class BadKappa(MixlabError):
    pass


class DegenerateLevels(MixlabError):
    pass


class ZeroGradient(MixlabError):
    pass


class PreconditionFailed(MixlabError):
    pass


class DegenerateTest(MixlabError):
    pass


class SingularSystem(MixlabError):
    pass


class NonConvergence(MixlabError):
    pass


class CylinderEscapes(MixlabError):
    pass


class EmptyCylinder(MixlabError):
    pass


class ContainmentFailed(MixlabError):
    pass


class NonPositiveField(MixlabError):
    pass


class NotOnInterface(MixlabError):
    pass


class SeedConditionFailed(MixlabError):
    pass


class NoPositiveLambdaHat(MixlabError):
    pass


class LadderExhausted(MixlabError):
    pass


class InsufficientLadder(MixlabError):
    pass


class NotApplicable(MixlabError):
    """Raised when a query has no meaning on the given field (e.g. empty seed set)."""


class ScenarioError(MixlabError):
    """Malformed or schema-violating scenario file."""
