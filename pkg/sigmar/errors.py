"""Exception hierarchy shared by the sigmar modules.

Every class also derives from the closest builtin so generic handlers
(``except ValueError``) keep working.
"""


class SigmarError(Exception):
    """Base class for all sigmar errors.

    Iterative estimators set ``iteration`` on errors leaving their loop.
    """
    iteration = None

    def __str__(self):
        msg = super().__str__()
        if self.iteration is not None:
            msg += f" at iteration {self.iteration}"
        return msg


class DimensionError(SigmarError, ValueError):
    """Shapes or lengths do not match."""


class DomainError(SigmarError, ValueError):
    """A parameter lies outside its admissible set."""


class DegenerateInputError(DomainError):
    """Input is degenerate (zero matrix, zero variance, zero trade row)."""


class ValidationError(SigmarError, ValueError):
    """Malformed input file or configuration."""


class NumericalError(SigmarError, ArithmeticError):
    """A factorization, solve or decomposition failed.

    Args:
        message (str): Description of the failure.
        condition (float): Optional condition number of the offending matrix.
        iteration (int): Optional outer iteration at which the failure happened.
    """
    def __init__(self, message, condition=None, iteration=None):
        super().__init__(message)
        self.condition = condition
        self.iteration = iteration

    def __str__(self):
        msg = Exception.__str__(self)
        if self.condition is not None:
            msg += f" (condition number {self.condition:.3e})"
        if self.iteration is not None:
            msg += f" at iteration {self.iteration}"
        return msg


class GenerationError(NumericalError):
    """The data-generating process could not produce admissible parameters."""
