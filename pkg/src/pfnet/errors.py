"""Exception and warning types shared across the package."""


class ModelError(ValueError):
    """Invalid input data: bad rates, non-stochastic routing, negative population."""


class StructureError(ModelError):
    """The network violates a structural requirement (reducible routing, no saturable queue)."""


class ErgodicityError(ModelError):
    """An open queue is driven at or beyond its effective service rate."""


class PopulationError(ModelError):
    """The requested population cannot be represented below the saturation load."""


class UnsupportedCaseError(ModelError):
    """A quantity was requested outside the cases the approximations cover."""


class NumericalInconsistencyError(RuntimeError):
    """A numerical estimate contradicts a property it must satisfy."""


class PrecisionWarning(UserWarning):
    """A truncation or tolerance was not met to the requested precision."""


class RegimeWarning(UserWarning):
    """An approximation is evaluated outside the regime where its bound is informative."""
