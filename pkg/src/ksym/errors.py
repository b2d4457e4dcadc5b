"""Exception hierarchy shared by all ksym modules."""


class KsymError(Exception):
    """Base class for all library errors."""


class ExpressionSyntaxError(KsymError):
    """Malformed expression text; `offset` is the byte offset of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class UnknownFunction(KsymError):
    def __init__(self, name, offset):
        super().__init__(f"unknown function '{name}' (offset {offset})")
        self.name = name
        self.offset = offset


class UndefinedVariable(KsymError):
    def __init__(self, name):
        super().__init__(f"variable '{name}' is not bound")
        self.name = name


class DomainError(KsymError):
    """Evaluation hit a singular point; carries the offending sub-expression."""

    def __init__(self, message, expr):
        super().__init__(f"{message} in '{expr}'")
        self.expr = expr


class Singular(KsymError):
    """Linear system has a vanishing pivot."""


class SingularFrame(KsymError):
    pass


class SingularMetric(KsymError):
    pass


class SingularHessian(KsymError):
    pass


class SingularBlock(KsymError):
    pass


class RankDeficient(KsymError):
    pass


class NotInvariant(KsymError):
    pass


class NonVerticalBracket(KsymError):
    pass


class GridTooSmall(KsymError):
    pass


class NonFiniteState(KsymError):
    pass


class StepRejected(KsymError):
    pass


class NonCommutingSweeps(KsymError):
    def __init__(self, defect, tol):
        super().__init__(f"sweep orders disagree: defect {defect:.3e} > {tol:.3e}")
        self.defect = defect


class ChartExit(KsymError):
    pass


class ConfigError(KsymError):
    """Configuration parse or validation failure; `path` locates the field."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class CrossOrderDefectWarning(UserWarning):
    pass
