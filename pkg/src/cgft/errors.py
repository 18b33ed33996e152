"""Exception hierarchy shared by all modules."""


class CGFTError(Exception):
    """Base class for library errors."""


class ValidationError(CGFTError, ValueError):
    """Input violates a documented invariant."""


class StructuralError(CGFTError, ValueError):
    """Objects that must share a node set, grid or dimension do not."""


class MomentOverflowError(CGFTError, OverflowError):
    pass


class PropernessError(CGFTError, ValueError):
    """A grid function is identically -inf."""


class GridLookupError(CGFTError, KeyError):
    pass


class PreconditionError(CGFTError, ValueError):
    pass


class ConvergenceError(CGFTError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
