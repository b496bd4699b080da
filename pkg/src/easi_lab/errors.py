"""Exception hierarchy.

Data problems (bad inputs, schema mismatches) derive from :class:`DataError`;
failures of a numerical procedure derive from :class:`NumericalError`.  The
command line maps the two families to distinct exit codes.
"""


class EasiLabError(Exception):
    """Base class for every error raised by the package."""


class DataError(EasiLabError):
    pass


class NumericalError(EasiLabError):
    pass


class SchemaError(DataError):
    """Malformed input file or object (e.g. a tariff schedule)."""


class ImputationError(DataError):
    """No tariff could be matched for some (municipality, utility) pairs."""

    def __init__(self, missing):
        self.missing = sorted(set(missing))
        shown = ", ".join(f"({m}, {u})" for m, u in self.missing[:10])
        more = "" if len(self.missing) <= 10 else f" and {len(self.missing) - 10} more"
        super().__init__(f"no tariff match for {shown}{more}")


class ZeroShare(DataError):
    pass


class NonPositivePrice(DataError):
    pass


class DegenerateDenominator(NumericalError):
    """``1 - p'Bp/2`` is numerically zero."""


class NoConvergence(NumericalError):
    def __init__(self, message, indices=None, history=None):
        super().__init__(message)
        self.indices = indices
        self.history = history


class SingularMoments(NumericalError):
    pass


class SingularJacobian(NumericalError):
    pass


class Infeasible(NumericalError):
    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class LafferRegion(NumericalError):
    """Revenue is not increasing in the tax rate over the search interval."""
