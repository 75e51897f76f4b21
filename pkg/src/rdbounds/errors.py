"""Exception types raised across the library.

Every error derives from :class:`RdBoundsError` so callers (and the CLI) can
catch library failures without swallowing programming errors.
"""


class RdBoundsError(Exception):
    """Base class for all library errors."""


class InvalidDistribution(RdBoundsError, ValueError):
    pass


class InvalidSpace(RdBoundsError, ValueError):
    pass


class UnknownPoint(RdBoundsError, KeyError):
    pass


class SizeLimit(RdBoundsError, ValueError):
    pass


class GridTooNarrow(RdBoundsError, ValueError):
    pass


class InvalidType(RdBoundsError, ValueError):
    pass


class InfiniteKl(RdBoundsError, ValueError):
    """Relative entropy is infinite: the first argument charges a point the second does not."""


class UnsupportedBeta(RdBoundsError, ValueError):
    pass


class InvalidTruth(RdBoundsError, ValueError):
    pass


class InvalidDesign(RdBoundsError, ValueError):
    pass


class UnsupportedGrowth(RdBoundsError, ValueError):
    pass


class Diverged(RdBoundsError, ArithmeticError):
    pass


class InsufficientGrid(RdBoundsError, ValueError):
    pass


class ConfigError(RdBoundsError, ValueError):
    """Malformed or unknown experiment configuration."""
