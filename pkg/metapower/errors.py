"""Exceptions raised by the metapower package.

All errors derive from ValueError, so callers that only distinguish between
valid and invalid input can keep catching ValueError. The command line front
end catches MetaPowerError and turns it into a nonzero exit status.
"""


class MetaPowerError(ValueError):
    """Base class for all domain errors."""


# ------------------------------------------------------------------------------
# Simulation and model errors
# ------------------------------------------------------------------------------

class DegenerateGeometry(MetaPowerError):
    """A transmitter coincides with a receiver it is connected to."""


class ShapeMismatch(MetaPowerError):
    """Array shapes are inconsistent with the number of links or layers."""


class TraceMismatch(MetaPowerError):
    """A forward trace does not belong to the parameters or channel given."""


class EmptyBatch(MetaPowerError):
    """An objective was requested for a batch without channel realizations."""


class InvalidPermutation(MetaPowerError):
    """A given index array is not a bijection of 0..K-1."""


class IndexOutOfRange(MetaPowerError):
    """A module assignment references a module that does not exist."""


class SearchSpaceTooLarge(MetaPowerError):
    """Exhaustive assignment search exceeds the configured cap."""


# ------------------------------------------------------------------------------
# Analysis errors
# ------------------------------------------------------------------------------

class DegenerateInput(MetaPowerError):
    """Similarity of a matrix with an all-zero Gram matrix is undefined."""


class EmptyInput(MetaPowerError):
    """A statistic was requested over an empty collection."""


class NonpositiveReference(MetaPowerError):
    """Relative gains need a strictly positive reference rate."""


# ------------------------------------------------------------------------------
# Configuration errors
# ------------------------------------------------------------------------------

class ParseError(MetaPowerError):
    """Configuration file is malformed or contains an unknown key.

    Attributes
    ----------
    key : string
        Offending property key (if any)
    line : int
        One-based line number in the configuration file (if known)
    """
    def __init__(self, message, key=None, line=None):
        if line is not None:
            message = 'line {}: {}'.format(line, message)
        super(ParseError, self).__init__(message)
        self.key = key
        self.line = line


class ValidationError(MetaPowerError):
    """Configuration values violate a documented constraint."""


class UnknownPreset(MetaPowerError):
    """Name does not reference one of the experiment presets."""
