"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes do not satisfy an operation's contract."""


class NumericError(ArithmeticError):
    """A value or gradient stopped being finite, or a numeric check failed."""


class FormatError(ValueError):
    """A file (image, label map, checkpoint, annotation line) is malformed."""


class ValidationError(ValueError):
    """Input data violates a documented invariant."""


class GenerationError(RuntimeError):
    """Synthetic scene generation could not satisfy its placement constraints."""


class ConfigError(ValueError):
    """Run configuration is malformed, unknown, or inconsistent."""
