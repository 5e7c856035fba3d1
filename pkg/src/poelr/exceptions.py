"""Exception hierarchy shared by every module."""


class PoEError(Exception):
    """Base class for all errors raised by poelr."""


class InvalidInput(PoEError, ValueError):
    pass


class DegenerateInput(PoEError, ValueError):
    pass


class NumericalOverflow(PoEError, FloatingPointError):
    pass


class FormatError(PoEError, ValueError):
    """Malformed binary file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergenceError(PoEError, ArithmeticError):
    """Training produced a non-finite loss.

    ``last_finite_epoch`` is 0 when the very first epoch already diverged.
    """

    def __init__(self, message, last_finite_epoch, history=None):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch
        self.history = history if history is not None else []


class DegenerateLog(PoEError, ValueError):
    pass


class DegenerateSamples(PoEError, ValueError):
    pass


class NoEligibleCell(PoEError, RuntimeError):
    """No (M, N) cell satisfied the p-value straddle rule; ``candidates`` holds the grid."""

    def __init__(self, message, candidates):
        super().__init__(message)
        self.candidates = candidates


class NotPoEStep(PoEError, ValueError):
    pass


class NotPersistentlyExciting(PoEError, ValueError):
    pass


class NoAcuteBatch(PoEError, RuntimeError):
    def __init__(self, message, table):
        super().__init__(message)
        self.table = table
