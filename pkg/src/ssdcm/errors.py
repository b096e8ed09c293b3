"""Exception hierarchy shared by all ssdcm modules."""


class SsdcmError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SsdcmError, ValueError):
    """Invalid configuration or argument value."""


class ChoiceDataError(SsdcmError, ValueError):
    """Input data violates the choice-data schema."""


class ParseError(ChoiceDataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(ChoiceDataError):
    pass


class FitError(SsdcmError):
    """A model could not be estimated."""


class UnderdeterminedModel(FitError):
    """Too few labeled observations to identify the coefficients."""


class DivergenceError(FitError):
    pass


class NumericError(FitError, ArithmeticError):
    pass
