"""Exception hierarchy shared by all pipeline stages."""


class TripEndsError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(TripEndsError):
    """Invalid or missing configuration (fatal, exit status 1)."""


class RejectedPairError(TripEndsError, ValueError):
    """Two records whose timestamps do not strictly increase."""


class InsufficientDataError(TripEndsError):
    """Too few samples for a calibration detector."""


class FitFailureError(TripEndsError):
    """A broken power-law fit could not be carried out."""


class RadiusUnreachableError(TripEndsError):
    """The POI radius rule has no solution inside the histogram range."""


class DomainError(TripEndsError, ValueError):
    """Input outside the mathematical domain of an operation."""


class DegenerateFitError(TripEndsError):
    """All samples identical, so the fitted spread would be zero."""


class AmbiguousCityError(TripEndsError):
    """A point lies inside more than one city polygon."""

    def __init__(self, message, candidates=()):
        super().__init__(message)
        self.candidates = tuple(candidates)


class EmptyTableError(TripEndsError):
    """Nothing to aggregate."""


class ConsistencyError(TripEndsError):
    """Inputs disagree with each other (e.g. a trip names an unknown city)."""


class PlanError(TripEndsError):
    """A synthetic fleet plan that cannot be realized."""
