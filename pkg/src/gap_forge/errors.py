"""Exception hierarchy shared by every gap_forge module."""


class GapForgeError(Exception):
    """Base class for all library errors."""


class ValidationError(GapForgeError, ValueError):
    """An input object violates a domain invariant."""


class NegativeMass(ValidationError):
    pass


class MassNotOne(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class MissingEmbedding(ValidationError):
    pass


class UnknownSymbol(ValidationError):
    pass


class LossStrategyMismatch(ValidationError):
    pass


class InfiniteLoss(GapForgeError, ArithmeticError):
    """Log-loss of a belief that puts zero mass on an observed outcome."""


class Infeasible(GapForgeError):
    """No mechanism satisfies the distortion budget."""


class NotConverged(GapForgeError):
    """Raised only on request; solvers normally flag ``converged=False``."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class TooLarge(GapForgeError):
    """Brute-force enumeration would exceed its evaluation guard."""


class NonFiniteLoss(GapForgeError, ArithmeticError):
    def __init__(self, message, round_index=None):
        super().__init__(message)
        self.round_index = round_index


class NonFiniteActivation(GapForgeError, ArithmeticError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class FileFormatError(GapForgeError, ValueError):
    """Malformed input file. ``line`` is 1-based; ``offset`` is a byte or index hint."""

    def __init__(self, path, message, line=None, offset=None):
        self.path = str(path)
        self.line = line
        self.offset = offset
        self.message = message
        where = self.path
        if line is not None:
            where += f":{line}"
        if offset is not None:
            where += f" (offset {offset})"
        super().__init__(f"{where}: {message}")
