class DadlError(Exception):
    """Base class for every error raised by the adaptation package."""


# ---------- CONTRACT ----------
class ContractError(DadlError, ValueError):
    """Operand shapes or preconditions do not hold."""


class ParameterError(ContractError):
    """A scalar parameter is outside its valid range."""


# ---------- NUMERICAL ----------
class NumericalError(DadlError, ArithmeticError):
    pass


class SolverFailureError(NumericalError):
    pass


class DefinitenessError(NumericalError):
    pass


class DegenerateDataError(NumericalError):
    pass


class SingularSystemError(NumericalError):
    pass


class DegenerateAtomError(SingularSystemError):
    """A closed-form atom came out with zero norm and cannot be normalized."""


# ---------- CONFIG ----------
class ConfigError(DadlError):
    pass
