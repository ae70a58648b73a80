class FreedomError(Exception):
    """Base class for errors raised by freedomrec."""


class DimensionError(FreedomError, ValueError):
    pass


class DomainError(FreedomError, ValueError):
    pass


class ParameterError(FreedomError, ValueError):
    pass


class DatasetError(FreedomError, ValueError):
    pass


class FormatError(FreedomError, ValueError):
    """A binary or text file does not match its declared layout."""


class TrainingDivergedError(FreedomError, RuntimeError):
    pass
