"""Exception types shared across the package."""


class ArbSurfError(Exception):
    """Base class for all package errors."""


class InputError(ArbSurfError, ValueError):
    """Invalid arguments or malformed input data."""


class DomainError(ArbSurfError, ValueError):
    """A value lies outside the domain where an inversion is defined."""


class ExtrapolationError(ArbSurfError, ValueError):
    """Evaluation requested beyond the last calibrated expiry."""


class ArbitrageError(ArbSurfError, ValueError):
    """Input prices violate a no-arbitrage condition the operation relies on."""

    def __init__(self, message, expiry=None, strike=None):
        super().__init__(message)
        self.expiry = expiry
        self.strike = strike


class CalibrationError(ArbSurfError):
    """The calibration LP did not reach an optimum."""

    def __init__(self, message, status=None, expiry=None):
        super().__init__(message)
        self.status = status
        self.expiry = expiry


class SchemaError(ArbSurfError, ValueError):
    """A serialized document does not match the expected schema."""


class TensorSizeError(ArbSurfError):
    """A generalized-model tensor would exceed the configured entry cap."""

    def __init__(self, message, required=None, cap=None):
        super().__init__(message)
        self.required = required
        self.cap = cap
