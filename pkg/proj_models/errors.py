"""
Exception hierarchy shared by every lab.

The harness maps these onto exit codes: ConfigError -> 2, any other
PopscalesError raised while a cell runs -> 3.
"""


class PopscalesError(Exception):
    pass


class ParameterError(PopscalesError, ValueError):
    """
    invalid input to an operation (dt <= 0, bandwidth <= 0, CFL violation,
    rate bound exceeded, model assumptions violated at construction)
    """


class DomainError(ParameterError):
    pass


class FrozenStateError(PopscalesError):
    """
    total event rate is zero; the caller decides whether this terminates
    """


class DiagnosticError(PopscalesError, RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class AssumptionHViolated(DiagnosticError):
    def __init__(self, active, message, trace=None):
        super().__init__('Assumption (H) violated on active set {}: {}'.format(list(active), message), trace)
        self.active = tuple(active)
