"""Exception taxonomy shared by all gradha modules.

The CLI maps these onto exit codes: data problems exit 3, numerical
failures (degeneracy, divergence) exit 4, configuration problems exit 2.
"""


class GradhaError(Exception):
    """Base class for all errors raised by this package."""


class InvalidDataError(GradhaError):
    """Input contains NaN/Inf or violates a type invariant."""


class ShapeError(GradhaError):
    """Matrix dimensions are inconsistent with the operation."""


class ArityError(ShapeError):
    """Too few operands (e.g. fewer than two subjects or matrices)."""


class LabelError(GradhaError):
    """Class labels are missing, mismatched, or degenerate."""


class DataFormatError(GradhaError):
    """A dataset or model file is malformed, truncated, or inconsistent."""


class SpecError(GradhaError):
    """A generator spec or experiment configuration violates its invariants."""


class DegeneracyError(GradhaError):
    """A matrix is numerically rank-deficient where full rank is required."""


class DivergenceError(GradhaError):
    """An iterative solver produced non-finite values."""
