"""Exception taxonomy shared across the package."""


class LevyPotError(Exception):
    """Base class for all errors raised by this package."""


class UnknownFamily(LevyPotError):
    pass


class ParamOutOfRange(LevyPotError):
    pass


class ValidationFailed(LevyPotError):
    pass


class DomainError(LevyPotError):
    pass


class NonConvergentQuadrature(LevyPotError):
    pass


class TransienceNotGuaranteed(LevyPotError):
    pass


class CutoffTooSmall(LevyPotError):
    pass


class HypothesisViolated(LevyPotError):
    pass


class OrderingViolated(LevyPotError):
    pass


class UnboundedLevyRatio(LevyPotError):
    pass


class NoWitnessFound(LevyPotError):
    pass


class ZeroDiagonal(LevyPotError):
    pass


class NegativeWeight(LevyPotError):
    pass


class DegenerateProfile(LevyPotError):
    pass


class DivergentIntegral(LevyPotError):
    pass


class ConfigParseError(LevyPotError):
    pass
