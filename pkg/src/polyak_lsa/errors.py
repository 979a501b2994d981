"""Exception hierarchy shared by all modules."""


class LsaError(Exception):
    """Base class for every error raised by this package."""


class NumericError(LsaError):
    """Numerical failure (maps to CLI exit code 3)."""


class NonFinite(LsaError, ValueError):
    pass


class NotHurwitz(LsaError, ValueError):
    pass


class Defective(LsaError, ValueError):
    """The drift matrix is not diagonalizable but the operation needs it."""


class Diverged(NumericError):
    """An iterate exceeded the overflow guard; the step size is unstable."""

    def __init__(self, step: int, norm: float, guard: float):
        super().__init__(
            f"Diverged: |theta_t| = {norm:.3e} > guard {guard:.1e} at t = {step}"
        )
        self.step = step
        self.norm = norm
        self.guard = guard


class SingularOperator(NumericError):
    pass


class NonErgodic(LsaError, ValueError):
    pass


class NotConvexConcave(LsaError, ValueError):
    pass


class MissingDiagnostics(LsaError, ValueError):
    pass


class ExcludedAlpha(LsaError, ValueError):
    pass


class ContractNotCertified(LsaError, ValueError):
    pass


class SchemaError(LsaError, ValueError):
    """Malformed config; ``path`` is the dotted location of the problem."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class NotPSD(NumericError):
    """A covariance came out with a clearly negative eigenvalue."""
