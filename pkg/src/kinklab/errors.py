"""Exception hierarchy.

Class names double as the error identifiers printed by the command line
tool, so they are kept short and stable.
"""


class KinklabError(Exception):
    """Base class for every error raised by the package."""


# potential / profile
class InvalidPotential(KinklabError):
    pass


class NonPositiveStep(KinklabError):
    pass


class PotentialVanishesInside(KinklabError):
    pass


class TailNotReached(KinklabError):
    pass


class TailUnderflow(KinklabError):
    pass


class QuadratureDisagreement(KinklabError):
    pass


# statics
class GridTooNarrow(KinklabError):
    pass


class NegativeEigenvalue(KinklabError):
    pass


class NoSeed(KinklabError):
    pass


# evolution
class CflViolation(KinklabError):
    pass


class BoundaryContamination(KinklabError):
    pass


class BlowupDetected(KinklabError):
    pass


# modulation
class NoConvergence(KinklabError):
    pass


class GapCollapse(KinklabError):
    pass


class SingularSystem(KinklabError):
    pass


class TrackingLost(KinklabError):
    pass


# reduced dynamics
class StepUnderflow(KinklabError):
    pass


class NonPositiveTime(KinklabError):
    pass


class NonPositive(KinklabError):
    pass


# construction
class NegativeDeficit(KinklabError):
    pass


class BoxExhausted(KinklabError):
    pass


class ConfigError(KinklabError):
    """Malformed or inconsistent experiment configuration."""
