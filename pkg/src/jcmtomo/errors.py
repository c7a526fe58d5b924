"""Exception types shared across the package."""

from __future__ import annotations


class JcmError(Exception):
    """Base class for all package errors."""


class UnphysicalBloch(JcmError, ValueError):
    """A Bloch vector lies outside the unit ball."""


class SingularDesign(JcmError):
    """The design matrix is (numerically) singular and cannot be inverted."""


class AllSingular(JcmError):
    """Every point of a time scan has a negligible determinant."""


class NoConventionMatches(JcmError):
    """Neither spin normalization reproduces the closed-form moments."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class EmptySupport(JcmError, ValueError):
    """A count record carries no outcomes."""


class SupportMismatch(JcmError, ValueError):
    """Two probability tables are defined over different outcome sets."""


class NonConvergence(JcmError):
    """The likelihood maximization exhausted its iteration budget.

    The best iterate found so far is available as ``solution``.
    """

    def __init__(self, message: str, solution=None):
        super().__init__(message)
        self.solution = solution
