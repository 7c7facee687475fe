"""Exception types shared across the toolkit."""


class FormatError(ValueError):
    """A file or config payload does not match its declared format."""


class ValidationError(ValueError):
    """Arguments or data violate a documented invariant."""


class TrainingDiverged(RuntimeError):
    """Actor/critic training produced non-finite values."""
