"""Exception types shared across the package."""


class QcatError(Exception):
    """Base class for all package errors."""


class LayoutError(QcatError):
    """Register bookkeeping problem: duplicate labels, dim mismatch, bad party."""


class ValidationError(QcatError):
    """An object failed its numerical contract (hermiticity, trace, norms)."""


class ProtocolError(QcatError):
    """A protocol was refused: bad input, budget overrun, ownership violation."""


class OracleRefusal(QcatError):
    """An exact certificate routine declined because its preconditions fail."""
