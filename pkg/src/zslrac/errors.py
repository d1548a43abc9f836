class ZSLError(Exception):
    """Base class for errors raised by zslrac."""


class DataError(ZSLError):
    """Malformed or inconsistent input data."""


class NumericalError(ZSLError):
    """Divergence, non-finite values, or a failed LP solve."""


class DivergenceError(NumericalError):
    def __init__(self, epoch, value):
        super().__init__(f"training diverged at epoch {epoch}: loss={value!r}")
        self.epoch = epoch
        self.value = value
