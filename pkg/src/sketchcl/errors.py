"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    """Bad shape, value or combination of arguments."""


class DivergenceError(RuntimeError):
    """Gradient descent blew up."""


class DegenerateRankError(ValueError):
    """A singular value required to be positive is zero."""


class SingularGramError(ValueError):
    """Gram matrix is numerically singular."""


class IdxFormatError(ValueError):
    """IDX file has a bad magic number, header or label value."""


class IdxLengthError(ValueError):
    """IDX file is shorter than its header promises."""


class MissingDataError(FileNotFoundError):
    """Required data files are not present."""
