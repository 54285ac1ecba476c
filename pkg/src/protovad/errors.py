"""Exception hierarchy shared by every module.

The CLI maps these classes onto exit codes, so each failure family gets its
own base class.
"""


class ProtoVADError(Exception):
    """Root of all library errors."""


class ConfigError(ProtoVADError, ValueError):
    """Invalid hyperparameter, config key or config value."""


class ShapeMismatchError(ProtoVADError, ValueError):
    """Array or model dimensions disagree."""


class NonFiniteError(ProtoVADError, ArithmeticError):
    """A NaN or Inf appeared where only finite values are allowed."""


class UndefinedAUCError(ProtoVADError, ValueError):
    """AUC requested for labels that contain a single class."""


class FormatError(ProtoVADError, IOError):
    """Base class for binary file decoding failures."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class CRCMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass
