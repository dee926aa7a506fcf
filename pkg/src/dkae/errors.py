"""Exception hierarchy shared by all dkae modules.

Every error carries an ``exit_code`` used by the command line front end:
2 for configuration problems, 3 for numeric failures, 4 for I/O.
"""


class DkaeError(Exception):
    exit_code = 3


class DimensionError(DkaeError, ValueError):
    """Shapes of the operands do not agree."""


class SymmetryError(DkaeError, ValueError):
    """A matrix that must be symmetric is not."""


class NotPositiveDefiniteError(DkaeError, ValueError):
    """Cholesky factorisation hit a non-positive pivot."""


class ParameterError(DkaeError, ValueError):
    """A scalar argument is outside its admissible range."""


class InsufficientDataError(DkaeError, ValueError):
    pass


class DegenerateInputError(DkaeError, ValueError):
    """Zero-norm matrix where a normalised quantity is required."""


class DegenerateCodesError(DegenerateInputError):
    """The code inner-product matrix of a batch collapsed to zero."""


class DegenerateLabelsError(DkaeError, ValueError):
    pass


class InvalidKernelError(DkaeError, ValueError):
    """Kernel matrix is not positive semi-definite within tolerance."""


class ParseError(DkaeError, ValueError):
    exit_code = 4


class ConfigError(DkaeError, ValueError):
    exit_code = 2
