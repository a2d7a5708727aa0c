"""
Error types raised by the simulation toolkit.

Numeric kernels raise these; the grid harness catches them per replicate and
records the failure as non-convergence instead of aborting a run.
"""


class EstimandsError(Exception):
    """Base class for every domain error."""


# statcore

class NotPositiveDefinite(EstimandsError):
    pass


class InsufficientData(EstimandsError):
    pass


class DegenerateVariance(EstimandsError):
    pass


class NonFiniteObjective(EstimandsError):
    pass


# trialgen

class InfeasibleCounts(EstimandsError):
    pass


# modelspec

class FormulaSyntaxError(EstimandsError):
    pass


class EmptyModel(FormulaSyntaxError):
    pass


class UnknownVariable(EstimandsError):
    pass


class EmptyDesign(EstimandsError):
    pass


# imputation

class StepFailure(EstimandsError):
    def __init__(self, copy, group, step, reason):
        self.copy = copy
        self.group = group
        self.step = step
        self.reason = reason
        super().__init__(f"copy {copy}, group {group}, step Y{step}: {reason}")


# analyze

class IncompleteData(EstimandsError):
    pass


class NonConvergence(EstimandsError):
    pass


class SingularCovariance(EstimandsError):
    pass


class TooFewCopies(EstimandsError):
    pass


# harness

class DivisionByZero(EstimandsError, ZeroDivisionError):
    pass


class EmptyReport(EstimandsError):
    pass


class ReportIOError(EstimandsError, OSError):
    def __init__(self, path, reason):
        self.path = path
        super().__init__(f"{path}: {reason}")


class ConfigurationError(EstimandsError):
    pass
