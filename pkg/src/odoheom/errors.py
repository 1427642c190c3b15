"""Exception hierarchy shared by all solver modules."""


class OdoError(Exception):
    """Base class for every error raised by the package."""


class DiscreteModelHasNoDensity(OdoError):
    pass


class QuadratureFailure(OdoError):
    def __init__(self, message, abserr=None):
        super().__init__(message)
        self.abserr = abserr


class ModelUnsupported(OdoError):
    pass


class EigenSolveFailure(OdoError):
    pass


class IllConditioned(OdoError):
    pass


class UnstableRoots(OdoError):
    pass


class UnpairedTerms(OdoError):
    def __init__(self, terms):
        self.terms = list(terms)
        super().__init__(f"no conjugate partner for terms {self.terms}")


class CapacityExceeded(OdoError):
    pass


class InvalidDensityMatrix(OdoError):
    pass


class ShapeMismatch(OdoError):
    pass


class PairingRequired(OdoError):
    pass


class StepLimitExceeded(OdoError):
    pass


class NonFiniteState(OdoError):
    def __init__(self, t):
        self.t = t
        super().__init__(f"non-finite entries in state at t={t!r}")


class TraceDriftExceeded(OdoError):
    pass


class DimensionBudget(OdoError):
    pass


class LeakageExceeded(OdoError):
    pass


class NotDephasing(OdoError):
    pass


class IndexOutOfRange(OdoError):
    pass


class TierTooShallow(OdoError):
    pass


class ConfigError(OdoError):
    """Invalid run configuration; ``field`` names the offending key path."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
