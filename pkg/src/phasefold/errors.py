"""Exception hierarchy shared across the package.

Each class carries a short machine-readable ``code`` used in run reports and
mapped onto CLI exit codes (usage=2, io=3, numeric=4, memory=5).
"""


class PhasefoldError(Exception):
    """Base class for all package errors."""

    code = "error"
    exit_code = 4


class DataFormatError(PhasefoldError):
    """Malformed file: bad magic, bad header, wrong field counts."""

    code = "format"
    exit_code = 3


class NonNumericCell(DataFormatError):
    """A CSV cell failed to parse as a number."""

    code = "non_numeric_cell"


class NonFiniteValue(PhasefoldError):
    """Input contains NaN or Inf; density estimation is undefined there."""

    code = "non_finite_value"
    exit_code = 4


class EmptyData(PhasefoldError):
    """Declared or parsed N or D is zero."""

    code = "empty_data"
    exit_code = 3


class InvalidSpec(PhasefoldError):
    """Invalid generator or selection configuration."""

    code = "invalid_spec"
    exit_code = 2


class OutOfMemoryBudget(PhasefoldError):
    """Estimated allocation exceeds the configured memory budget."""

    code = "out_of_memory_budget"
    exit_code = 5


class TrainingDiverged(PhasefoldError):
    """Flow training hit a non-finite loss; carries the failing step."""

    code = "training_diverged"
    exit_code = 4

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"loss became non-finite at step {step}")


class AllPointsSelected(PhasefoldError):
    """Target count exceeds the dataset size: every probability clips to 1."""

    code = "all_points_selected"
    exit_code = 4


class WorkerFailed(PhasefoldError):
    """A parallel worker raised; carries the failing partition index."""

    code = "worker_failed"
    exit_code = 4

    def __init__(self, partition: int, cause: BaseException):
        self.partition = partition
        self.cause = cause
        super().__init__(f"partition {partition} failed: {cause!r}")
