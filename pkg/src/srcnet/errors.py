"""Exception hierarchy. CLI exit codes are keyed on these classes."""


class SrcNetError(Exception):
    exit_code = 1


class ConfigurationError(SrcNetError, ValueError):
    """Inconsistent shapes, widths or parameter values."""

    exit_code = 2


class UsageError(SrcNetError, ValueError):
    exit_code = 2


class InputError(SrcNetError, ValueError):
    """Bad user data: pixel ranges, targets, empty datasets."""

    exit_code = 3


class IdxParseError(InputError):
    pass


class BadMagicError(IdxParseError):
    pass


class TruncatedFileError(IdxParseError):
    pass


class CountMismatchError(IdxParseError):
    pass


class NumericalError(SrcNetError, ArithmeticError):
    """Non-finite value encountered during training."""

    exit_code = 4
