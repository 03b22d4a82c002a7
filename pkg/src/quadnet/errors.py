"""Exception hierarchy shared by every module.

The CLI maps ``UsageError`` subclasses to exit code 2 and ``RuntimeDataError``
subclasses to exit code 3.
"""


class QuadnetError(Exception):
    pass


class UsageError(QuadnetError):
    """Bad configuration, shapes, or arguments supplied by the caller."""


class RuntimeDataError(QuadnetError):
    """The data itself made the requested computation impossible."""


class DimensionError(UsageError, ValueError):
    pass


class DomainError(UsageError, ValueError):
    pass


class ContractError(UsageError, ValueError):
    pass


class ConfigError(UsageError, ValueError):
    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class BatchSizeError(UsageError, ValueError):
    pass


class BatchCompositionError(RuntimeDataError):
    """No valid quadruplet can be formed from the batch; resample it."""


class DataError(RuntimeDataError):
    pass


class ParseError(RuntimeDataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SplitError(RuntimeDataError):
    pass


class GenerationError(RuntimeDataError):
    pass


class TrainingError(RuntimeDataError):
    def __init__(self, message: str, param: str | None = None):
        self.param = param
        super().__init__(f"{param}: {message}" if param else message)


class CheckpointError(UsageError):
    pass
