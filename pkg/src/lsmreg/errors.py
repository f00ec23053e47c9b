"""Exception types shared across the package."""


class LsmregError(Exception):
    """Base class for all package-specific errors."""


class CoincidentPoints(LsmregError):
    """Source and evaluation point coincide; the wave kernel is singular."""


class DimensionMismatch(LsmregError):
    """Array shapes are inconsistent with the operation's contract."""


class NumericalFailure(LsmregError):
    """A numerical routine produced or received non-finite values."""


class SingularOperator(LsmregError):
    """Unregularized solve requested on an operator with a zero singular value."""


class NoSignal(LsmregError):
    """All projected coefficients vanish; the discrepancy equation is degenerate."""


class NoRoot(LsmregError):
    """Bracket expansion failed to enclose a root of the discrepancy equation."""


class EmptyBackground(LsmregError):
    """Contrast metrics need a nonempty background region."""


class MissingInput(LsmregError):
    """A pipeline stage requires an artifact that has not been produced."""
