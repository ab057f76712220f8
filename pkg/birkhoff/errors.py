"""Exception hierarchy shared by every module.

Each class carries the process exit code the CLI reports for it, the same way
the HTTP handlers this package grew out of paired every failure with a status
code.
"""


class BirkhoffError(Exception):
    """Base class for all library errors"""

    exit_code = 1


class InvalidInputError(BirkhoffError, ValueError):
    """A precondition on an argument, spec or value was violated"""

    exit_code = 2


class UnmappedSymbolError(InvalidInputError, LookupError):
    """A symbol has no entry in the observable table"""

    def __init__(self, symbol: int):
        super().__init__(f"Symbol {symbol} has no observable value")
        self.symbol = symbol


class InvalidEpsilonError(InvalidInputError):
    """Detection half-width too large for the limit-set endpoints"""


class InsufficientDataError(BirkhoffError):
    """Not enough terms, samples or detected times for the requested analysis"""

    exit_code = 3


class ArithmeticOverflowError(BirkhoffError, OverflowError):
    """Block-length arithmetic left the checked 128-bit range"""

    exit_code = 4


class FeasibilityError(BirkhoffError):
    """Cylinder counting is infeasible for the requested length or schedule"""

    exit_code = 4


class SamplingError(BirkhoffError):
    """A segment series cannot be discretized into a sampled stream"""

    exit_code = 4
