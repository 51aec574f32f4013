"""Exception hierarchy shared by every module."""


class DeconfounderError(Exception):
    """Base class for errors raised by this package."""


class SchemaError(DeconfounderError, ValueError):
    pass


class DataParseError(DeconfounderError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DataValidationError(DeconfounderError, ValueError):
    pass


class SpecError(DeconfounderError, ValueError):
    """A model specification is invalid or incompatible with the data."""


class DivergenceError(DeconfounderError, ArithmeticError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class RankDeficiencyError(DeconfounderError, ArithmeticError):
    pass


class ConvergenceError(DeconfounderError, ArithmeticError):
    pass
