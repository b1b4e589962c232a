"""Exception types raised across the package."""


class DeepComplexError(Exception):
    """Base class for package errors."""


class ShapeError(DeepComplexError, ValueError):
    pass


class MaskError(DeepComplexError, ValueError):
    """Infeasible or inconsistent sampling-mask parameters."""


class FileFormatError(DeepComplexError):
    """A binary file has a bad magic, version, declared size or is truncated."""


class GradientError(DeepComplexError, ArithmeticError):
    """Raised by the tape when a backward pass cannot proceed."""


class TrainingDiverged(DeepComplexError, ArithmeticError):
    def __init__(self, epoch: int, step: int, detail: str = "non-finite loss"):
        self.epoch = epoch
        self.step = step
        super().__init__(f"{detail} at epoch {epoch}, step {step}")
