"""Exception taxonomy shared by every module.

The CLI maps these onto exit codes (validation 2, numeric 3, resource 4),
so new error conditions should reuse one of the classes below.
"""

from __future__ import annotations


class CaiError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(CaiError, ValueError):
    """A precondition on arguments or configuration was violated."""


class ResourceLimitError(CaiError):
    """An enumeration or memory cap would be exceeded.

    The message names the cap that would be required, so callers can
    re-run with ``CAI_MAX_ENUM`` raised deliberately.
    """


class NumericError(CaiError, ArithmeticError):
    """A non-finite intermediate appeared (overflow, underflow, NaN)."""


class DegenerateWeightsError(CaiError):
    """All importance weights are zero and no fallback applies."""
