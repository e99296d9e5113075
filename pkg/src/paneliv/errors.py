"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line frontend can map
failures onto its exit-status taxonomy without string matching.
"""


class PanelIVError(Exception):
    """Base class for all package errors."""

    exit_code = 5
    category = "internal"
    hint = ""

    def __str__(self):
        msg = super().__str__()
        if self.hint:
            msg = f"{msg} (hint: {self.hint})"
        return msg


class ConfigError(PanelIVError, ValueError):
    exit_code = 2
    category = "config"


class SpecError(ConfigError):
    """A model specification violates its role invariants."""


class GridError(ConfigError):
    pass


class DataError(PanelIVError, ValueError):
    exit_code = 3
    category = "data"


class CSVParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateObservationError(DataError):
    pass


class CellTypeError(DataError):
    def __init__(self, column, line, value):
        self.column = column
        self.line = line
        self.value = value
        super().__init__(f"non-numeric value {value!r} in column {column!r} at line {line}")


class SingletonEntityError(DataError):
    pass


class EstimationError(PanelIVError, ArithmeticError):
    exit_code = 4
    category = "estimation"


class CollinearityError(EstimationError):
    def __init__(self, columns, message=None):
        self.columns = tuple(columns)
        super().__init__(message or f"design is rank deficient; dependent columns: {', '.join(self.columns)}")


class DegreesOfFreedomError(EstimationError):
    pass


class DegenerateInstrumentError(EstimationError):
    pass


class DegenerateClusterError(EstimationError):
    pass


class UnsupportedConfigurationError(EstimationError):
    pass


class ExperimentError(EstimationError):
    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)
