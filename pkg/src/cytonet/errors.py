"""Exception types shared across the package.

Validation failures (bad shapes, bad arguments, malformed files) raise
ValidationError subclasses and map to CLI exit code 1.  Numerical failures
(non-finite values, impossible factorizations) raise NumericError and map
to exit code 2.
"""


class ValidationError(ValueError):
    """Caller passed something structurally wrong: shapes, ranges, arguments."""


class ShapeError(ValidationError):
    """Array input has the wrong rank or dimensions."""


class CheckpointError(ValidationError):
    """Checkpoint file is malformed, truncated or of the wrong kind."""


class NumericError(RuntimeError):
    """A computation produced non-finite values or an invalid factorization."""


def require(condition, message):
    if not condition:
        raise ValidationError(message)
