class LpSparseError(Exception):
    """Base class for all package errors."""


class InvalidConfigError(LpSparseError, ValueError):
    pass


class DatasetFormatError(LpSparseError):
    """Raised when an LPDS/LPMD file cannot be decoded.

    ``kind`` is one of ``malformed-header``, ``truncated-file`` or
    ``value-out-of-range``.
    """

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


class UndefinedSparsityError(LpSparseError, ValueError):
    """Sparsity of an all-zero vector is 0/0."""


class NonFiniteGradientError(LpSparseError, FloatingPointError):
    pass


class DivergenceError(LpSparseError, FloatingPointError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


class CalibrationError(LpSparseError):
    pass
