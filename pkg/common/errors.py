# common/errors.py
from typing import Optional


class BrwLabError(Exception):
    """Base class for every error raised by the laboratory."""

    exit_code: int = 1


class ParameterError(BrwLabError, ValueError):
    """Precondition violation of an operation (bad n, bad slope, ...)."""

    exit_code = 2


class ConfigError(BrwLabError):
    """Experiment config does not match config/experiment.schema.json."""

    exit_code = 2


class LawValidationError(BrwLabError):
    """An offspring law violates a named model assumption."""

    exit_code = 2

    def __init__(self, assumption: str, detail: str):
        self.assumption = assumption
        self.detail = detail
        super().__init__(f"law rejected ({assumption}): {detail}")


class NoCriticalPoint(BrwLabError):
    """psi(t) = t psi'(t) has no solution: the top atoms percolate."""

    exit_code = 3

    def __init__(self, detail: str, top_mass: Optional[float] = None):
        self.top_mass = top_mass
        super().__init__(detail)


class DomainTooNarrow(BrwLabError):
    exit_code = 3


class IdentityCertificationError(BrwLabError):
    """Boundary-case identities E sum e^-V = 1, E sum V e^-V = 0 failed."""

    exit_code = 2


class RuntimeBudgetExceeded(BrwLabError):
    exit_code = 4
