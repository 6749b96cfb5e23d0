"""Exception types raised by qm2arl.

Every error subclasses both `Qm2arlError` and the closest builtin, so
callers can catch either.
"""


class Qm2arlError(Exception):
    """Base class for all qm2arl errors"""


class SizeError(Qm2arlError, ValueError):
    """A vector, register or collection has the wrong size"""


class DomainError(Qm2arlError, ValueError):
    """A value lies outside the domain an operation accepts"""


class QubitIndexError(Qm2arlError, IndexError):
    """A qubit index lies outside 1..L"""


class ArgumentError(Qm2arlError, ValueError):
    """Arguments are individually valid but inconsistent together"""


class UnknownActionError(Qm2arlError, KeyError):
    """An action has no entry in the action-to-qubit map"""


class EnvStateError(Qm2arlError, RuntimeError):
    """An environment was stepped in a state that does not allow it"""


class MemoryLookupError(Qm2arlError, KeyError):
    """A pole memory has no entry under the requested label"""


class MemoryParseError(Qm2arlError, ValueError):
    """A pole memory file could not be parsed"""


class DegenerateGridError(Qm2arlError, ZeroDivisionError):
    """A distance grid has no spread to normalize by"""


class ConfigError(Qm2arlError, ValueError):
    """A run configuration field is invalid"""

    def __init__(self, field: str, reason: str):
        self.field = field
        self.message = f"invalid value for '{field}': {reason}"
        super().__init__(self.message)
