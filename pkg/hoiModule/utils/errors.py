"""
    Exception hierarchy shared by every sub-package.

    Each class carries the process exit code the command-line interface returns when the
    error escapes a command. Classes also derive from the closest builtin so callers can keep
    catching ValueError / ArithmeticError / RuntimeError.
"""


class HoiError(Exception):
    """Root of all errors raised by hoiModule."""
    exit_code = 1


class ConfigError(HoiError, ValueError):
    """Invalid run configuration or command-line override."""
    exit_code = 2


class DataError(HoiError, ValueError):
    """Malformed input data: files, meshes, vectors of the wrong length."""
    exit_code = 3


class ShapeError(DataError):
    """Operands whose shapes cannot be combined."""


class WeightsFormatError(DataError):
    """Denoiser weights file that cannot be trusted (magic, version, hash, truncation)."""


class SceneGenerationError(DataError):
    """A synthetic scene could not be generated within the resample budget."""


class NumericalError(HoiError, ArithmeticError):
    """Numerical abort: the computation left the finite / well-conditioned regime."""
    exit_code = 4


class NonFiniteError(NumericalError):
    """A NaN or an infinity appeared."""


class DegenerateRotationError(NumericalError):
    """6D rotation whose two columns are zero or parallel."""


class GuidanceOverflowError(NumericalError):
    """Physical guidance gradient too large to be applied."""


class TapeError(HoiError, RuntimeError):
    """Misuse of an autodiff tape."""


# Exit code for batch commands where only part of the scenes failed
PARTIAL_FAILURE_EXIT_CODE = 5
