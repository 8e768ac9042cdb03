"""Exception types raised across the package."""


class StacError(Exception):
    pass


class DimensionError(StacError, ValueError):
    """Array shape does not match what a network, env or buffer expects."""


class DomainError(StacError, ValueError):
    """Argument outside the mathematical domain of an operation (e.g. sigma <= 0)."""


class UsageError(StacError, RuntimeError):
    """API misuse: stale tape, empty buffer, bad configuration field, ..."""


class TapeError(UsageError):
    pass


class RangeError(StacError, OverflowError):
    pass


class TrainingHealthError(StacError, FloatingPointError):
    """Non-finite value detected during training.

    ``snapshot`` carries whatever diagnostics were available at the point of
    failure (env step, losses, temperature, gradient norms).
    """

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = dict(snapshot or {})
