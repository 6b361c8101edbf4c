"""Exception types shared across the package.

Two families: validation errors (bad inputs, malformed files, broken
contracts) map to CLI exit code 2; compute errors (numerical failures
during optimization) map to exit code 3.
"""


class LocalLearnError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(LocalLearnError):
    """Input or file contract violation."""


class ComputeError(LocalLearnError):
    """Numerical failure during a computation."""


class MalformedFile(ValidationError):
    pass


class DimMismatch(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    """A NaN or infinity where only finite reals are admitted.

    ``row`` and ``col`` are 0-based sample/feature indices when known.
    """

    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class IdMismatch(ValidationError):
    """Sample id sets disagree; ``missing`` holds the symmetric difference."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = frozenset(missing)


class MissingLabels(ValidationError):
    pass


class UnknownSource(ValidationError):
    pass


class UnknownClassName(ValidationError):
    pass


class SingleClass(ValidationError):
    pass


class NoTrainedClasses(ValidationError):
    pass


class LevelMismatch(ValidationError):
    pass


class ImageTooSmall(ValidationError):
    pass


class NonFiniteGradient(ComputeError):
    pass
