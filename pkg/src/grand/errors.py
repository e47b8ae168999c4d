"""Exception hierarchy shared by all modules."""


class GrandError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(GrandError):
    """Operand dimensions are inconsistent."""


class IndexOutOfRange(GrandError):
    """A node or column index exceeds the declared bound."""


class InvalidParam(GrandError):
    """A parameter is outside its documented domain."""


class NumericalError(GrandError):
    """A non-finite value appeared where finite math was required."""


class StateError(GrandError):
    """Mutable state (cache, optimizer) does not match its owner."""


class IoError(GrandError):
    """A required file is missing or unreadable."""


class FormatError(GrandError):
    """An input file parses but violates the format contract."""


class TooLarge(GrandError):
    """A guard against accidentally materializing huge dense data."""
