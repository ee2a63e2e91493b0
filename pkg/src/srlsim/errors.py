"""Exception hierarchy shared by every srlsim module."""


class SrlSimError(Exception):
    """Base class for all errors raised by srlsim."""


class InvalidStateError(SrlSimError, ValueError):
    pass


class ModelConfigError(SrlSimError, ValueError):
    pass


class CalibrationSingularError(SrlSimError, ValueError):
    def __init__(self, message, dimension=None):
        super().__init__(message)
        self.dimension = dimension


class ControllerConfigError(SrlSimError, ValueError):
    pass


class GateConfigError(SrlSimError, ValueError):
    pass


class GaitDataError(SrlSimError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class ClassifierError(SrlSimError, ValueError):
    pass


class DivergenceError(SrlSimError, RuntimeError):
    def __init__(self, message, last_valid_time=None):
        super().__init__(message)
        self.last_valid_time = last_valid_time


class ConfigError(SrlSimError, ValueError):
    pass


class MetricsError(SrlSimError, ValueError):
    pass


class PlotError(SrlSimError, ValueError):
    pass
