"""Exception hierarchy shared by all bnncal modules."""


class BnncalError(Exception):
    """Base class for every error raised by this package."""


class ContractError(BnncalError, ValueError):
    """An argument violated a documented precondition (shape, range, emptiness)."""


class SingularCovarianceError(ContractError):
    pass


class DegenerateFitError(BnncalError, ValueError):
    """A calibrator cannot be fit, e.g. only one class is present."""


class InfiniteLossError(BnncalError, ValueError):
    pass


class DivergenceError(BnncalError, RuntimeError):
    """Training produced non-finite values.

    ``last_state`` holds the last parameters for which everything was finite.
    """

    def __init__(self, message, last_state=None, epoch=None):
        super().__init__(message)
        self.last_state = last_state
        self.epoch = epoch


class StratificationError(BnncalError, ValueError):
    pass


class ParseError(BnncalError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(BnncalError, ValueError):
    pass


class UndefinedStatisticError(BnncalError, ValueError):
    pass


class AssemblyError(BnncalError, ValueError):
    pass
