"""Exception types shared across the toolkit.

Every reader, kernel, and pipeline stage raises one of these instead of
letting a bare ValueError or struct.error escape; the CLI maps them onto
its exit-code contract (1 usage, 2 data/format, 3 numeric).
"""


class MarvisError(Exception):
    """Base class for all toolkit errors."""


class FormatError(MarvisError):
    """On-disk artifact violates its format (bad magic, header, version)."""


class ShapeError(MarvisError):
    """Array dimensions are inconsistent with the operation's contract."""


class ConfigError(MarvisError):
    """Configuration value outside its documented domain."""


class ValidationError(MarvisError):
    """Payload violates a data invariant (non-finite values, bad labels)."""


class InsufficientDataError(MarvisError):
    """Too few samples for the requested estimation."""


class DegeneracyError(MarvisError):
    """Input configuration is degenerate (e.g. all points collinear)."""


class GraphError(MarvisError):
    """Autodiff graph misuse (repeated backward, detached loss)."""


class NumericError(MarvisError):
    """Non-finite value where the pipeline requires finite numerics."""
