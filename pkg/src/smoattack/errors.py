"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`SmoAttackError`, so callers can catch the whole family at once.
Where a numpy/ValueError flavour is natural the classes also inherit it.
"""


class SmoAttackError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SmoAttackError, ValueError):
    pass


# -- model ------------------------------------------------------------------

class SingularAlgebraicBlock(SmoAttackError, ValueError):
    """The load-bus susceptance block cannot be eliminated."""


class UnstablePlant(SmoAttackError, ValueError):
    """A plant declared stable has an eigenvalue with nonnegative real part."""


class RankDeficientB(SmoAttackError, ValueError):
    pass


# -- transforms -------------------------------------------------------------

class RankDeficientC(SmoAttackError, ValueError):
    pass


class RankDeficientD(SmoAttackError, ValueError):
    pass


class UnobservablePair(SmoAttackError, ValueError):
    pass


class InvalidPoles(SmoAttackError, ValueError):
    pass


class NoFiniteRelativeDegree(SmoAttackError, ValueError):
    pass


# -- observers --------------------------------------------------------------

class SingularD2(SmoAttackError, ValueError):
    pass


class RankDeficientCaB(SmoAttackError, ValueError):
    pass


class SingularDbar(SmoAttackError, ValueError):
    pass


class UnsupportedOrder(SmoAttackError, ValueError):
    pass


class CallbackFailure(SmoAttackError, RuntimeError):
    """A user-supplied model callback failed; ``point`` holds the offending input."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class SingularLieMatrix(CallbackFailure):
    pass


# -- sparse -----------------------------------------------------------------

class TooManySupports(SmoAttackError, ValueError):
    pass


class ZeroDynamicsPresent(SmoAttackError, ValueError):
    pass


# -- engine -----------------------------------------------------------------

class ConfigError(SmoAttackError, ValueError):
    """Invalid scenario configuration; ``key`` is the dotted key path."""

    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


class NumericBlowup(SmoAttackError, FloatingPointError):
    """A non-finite value appeared during simulation at step ``step``."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class GridMismatch(SmoAttackError, ValueError):
    pass


class TraceIOError(SmoAttackError, OSError):
    pass
