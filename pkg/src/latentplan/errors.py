"""Exception types raised by latentplan."""


class LatentPlanError(Exception):
    """Base class for all latentplan errors."""


class DegenerateTrajectoryError(LatentPlanError, ValueError):
    """A trajectory is too short for the requested operation."""


class GenerationError(LatentPlanError, RuntimeError):
    """Scene generation could not satisfy its config within its retry limit."""


class DatasetParseError(LatentPlanError, ValueError):
    """A dataset line could not be parsed.

    Attributes:
        line_number: 1-based line number of the offending record.
    """

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ShapeError(LatentPlanError, ValueError):
    """An operand has the wrong shape for the layer receiving it."""


class NumericError(LatentPlanError, ArithmeticError):
    """A computation produced or received non-finite values."""


class ContractError(LatentPlanError, ValueError):
    """Inputs violate an operation's calling contract."""


class CheckpointError(LatentPlanError, ValueError):
    """A checkpoint is corrupt or was written by an incompatible version."""


class TrainingDivergedError(LatentPlanError, RuntimeError):
    """A loss term became non-finite during training.

    Attributes:
        term: Name of the first non-finite loss term.
    """

    def __init__(self, term: str, message: str):
        super().__init__(message)
        self.term = term
