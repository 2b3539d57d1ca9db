"""Exception hierarchy.

The CLI maps these onto exit codes: ``ConfigError`` -> 1, ``DataError`` -> 2,
``TrainingError`` -> 3. Contract violations are programming errors and are
not mapped.
"""


class TrireserveError(Exception):
    pass


class ContractError(TrireserveError, ValueError):
    """A documented precondition was violated by the caller."""


class DimensionError(ContractError):
    pass


class EmptyHistoryError(ContractError):
    pass


class UnknownLevelError(ContractError, IndexError):
    pass


class ConfigError(TrireserveError):
    pass


class DataError(TrireserveError):
    pass


class SchemaError(DataError):
    pass


class DuplicateRecordError(DataError):
    pass


class NormalizationError(DataError):
    pass


class CoverageError(DataError):
    pass


class UndefinedFactorError(DataError):
    pass


class TrainingError(TrireserveError):
    pass


class DivergenceError(TrainingError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class EnsembleMemberError(TrainingError):
    def __init__(self, member: int, cause: BaseException):
        super().__init__(f"ensemble member {member} failed: {cause}")
        self.member = member
        self.cause = cause
