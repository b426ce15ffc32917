"""Exception hierarchy.

Two families matter to callers: :class:`InputError` (malformed input, exit
code 2 on the command line) and :class:`CheckFailure` (a mathematical check
did not pass, exit code 1).
"""

from __future__ import annotations


class ContactLabError(Exception):
    """Base class for all package errors."""


class InputError(ContactLabError, ValueError):
    """Malformed or inconsistent input."""


class CheckFailure(ContactLabError):
    """A mathematical verification failed.

    Parameters
    ----------
    message : str
        Human readable description.
    worst_point : array_like, optional
        Chart coordinates of the worst offending sample.
    value : float, optional
        Offending value at ``worst_point``.
    """

    def __init__(self, message: str, worst_point=None, value=None):
        super().__init__(message)
        self.worst_point = None if worst_point is None else [float(c) for c in worst_point]
        self.value = None if value is None else float(value)


# -- expression language -----------------------------------------------------

class ExprSyntaxError(InputError):
    """Malformed expression text; ``offset`` is the byte offset of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifier(InputError):
    """Identifier outside the chart variables, constants and function list."""

    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class DomainError(ContactLabError, ArithmeticError):
    """Evaluation left the real domain (log of non-positive, division by zero...)."""


# -- geometry ------------------------------------------------------------------

class DimensionError(InputError):
    """Form degrees exceed the chart dimension."""


# -- contact pairs -------------------------------------------------------------

class NotContact(CheckFailure):
    """A contact sign condition fails somewhere on the grid."""


# -- bounded solutions ---------------------------------------------------------

class BracketFailure(CheckFailure):
    """The escape bound did not bracket the bounded initial value."""


class MissingSigma(CheckFailure):
    """Bounded solution missing at some requested point."""


# -- Liouville / Reeb ----------------------------------------------------------

class SingularSystem(CheckFailure):
    """Reeb system is singular (the form is not contact there)."""


class HypothesisViolated(CheckFailure):
    """A quantitative hypothesis of a construction is not met."""


class BoundViolated(CheckFailure):
    """A posteriori smoothing bounds not met."""


class NoFeasibleEpsilon(CheckFailure):
    """No deformation parameter yields a Liouville pair."""


class CertificateFailure(CheckFailure):
    """A trajectory certificate failed."""


# -- certificates --------------------------------------------------------------

class NotClosed(CheckFailure):
    """Witness form is not closed."""


class NotDominating(CheckFailure):
    """Witness form is not positive on the plane field."""


class NotDivergenceFree(CheckFailure):
    """Witness vector field does not preserve volume."""


class NotTransverse(CheckFailure):
    """Witness vector field is not positively transverse."""


# -- cylinder ------------------------------------------------------------------

class NonConvergence(CheckFailure):
    """Monotone limit did not settle within tolerance."""


class ConstructionFailed(CheckFailure):
    """A transversal could not be closed up with a one-signed margin."""


class BandInvalid(InputError):
    """Band endpoints are not fixed points of the return map."""
