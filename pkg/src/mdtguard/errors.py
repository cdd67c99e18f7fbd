"""Exception hierarchy shared by all mdtguard modules."""


class MdtGuardError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(MdtGuardError, ValueError):
    pass


class CapacityError(MdtGuardError):
    """Raised when a dense computation would exceed its configured size cap."""


class NoCoverageError(MdtGuardError):
    pass


class ConfigurationError(MdtGuardError, ValueError):
    pass


class ParseError(MdtGuardError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class IntegrityError(MdtGuardError):
    pass


class InjectionError(MdtGuardError):
    pass


class InvalidActionError(MdtGuardError):
    pass


class EvaluationError(MdtGuardError):
    pass


class TrainingError(MdtGuardError):
    pass


class StateError(MdtGuardError):
    """Model used before it was trained / calibrated / fitted."""


class FitError(MdtGuardError):
    pass


class SplitError(MdtGuardError):
    pass


class CompatibilityError(MdtGuardError):
    """Model bundle and dataset were produced for different feature schemas."""
