"""Exception types raised by ficsel.

Two families matter to callers: bad input (``ValidationError``) and
numerical trouble with otherwise well-formed input (``NumericalError``).
The CLI maps them to exit codes 2 and 3.
"""


class FicselError(Exception):
    """Base class for all package errors."""


class ValidationError(FicselError, ValueError):
    """Input fails a documented precondition."""


class NumericalError(FicselError, ArithmeticError):
    """A computation could not be carried out reliably."""


class RankDeficiencyError(NumericalError):
    """A design or moment matrix is (numerically) singular."""
