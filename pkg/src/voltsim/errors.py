"""Exception hierarchy shared by all voltsim modules."""


class VoltsimError(Exception):
    """Base class for every error raised by voltsim."""


class InvalidParameterError(VoltsimError, ValueError):
    pass


class OutOfModelRangeError(VoltsimError, ValueError):
    """Voltage at or below the transistor overdrive threshold."""


class UnreachableThresholdError(VoltsimError):
    pass


class InvalidCalibrationInputError(VoltsimError, ValueError):
    pass


class NoSuchOperatingPointError(VoltsimError, KeyError):
    pass


class TraceParseError(VoltsimError, ValueError):
    def __init__(self, path, lineno, message):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class DecodeError(VoltsimError, ValueError):
    pass


class InvalidReferenceError(VoltsimError, ValueError):
    pass


class AccountingError(VoltsimError):
    pass


class SingularFitError(VoltsimError, ArithmeticError):
    pass


class ProfileInvalidError(VoltsimError, ValueError):
    pass


class UndefinedStatisticError(VoltsimError, ArithmeticError):
    pass


class ConfigError(VoltsimError, ValueError):
    pass
