"""Exception hierarchy.

Every error carries a short machine-readable ``code`` and a distinct process
``exit_code`` used by the command line driver.
"""

from __future__ import annotations


class BlochGreenError(Exception):
    """Base class for all library errors."""

    code = "error"
    exit_code = 1

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.details = details

    def to_dict(self) -> dict:
        return {"code": self.code, "message": str(self), "details": self.details}


class PreconditionError(BlochGreenError):
    code = "precondition"
    exit_code = 4


# -- input / plumbing ------------------------------------------------------
class ConfigError(BlochGreenError):
    code = "config"
    exit_code = 2


class FileError(BlochGreenError):
    code = "file"
    exit_code = 3


class SchemaError(BlochGreenError):
    code = "schema"
    exit_code = 5


# -- model validation ------------------------------------------------------
class ModelError(BlochGreenError):
    code = "model"
    exit_code = 9


class MissingAdjointEdge(ModelError):
    code = "missing_adjoint_edge"
    exit_code = 10


class DisconnectedQuotient(ModelError):
    code = "disconnected_quotient"
    exit_code = 11


class BadSign(ModelError):
    code = "bad_sign"
    exit_code = 12


class Reducible(ModelError):
    code = "reducible"
    exit_code = 13


class ZeroDisplacement(BlochGreenError):
    code = "zero_displacement"
    exit_code = 20


# -- band structure / edges ------------------------------------------------
class EigFailure(BlochGreenError):
    code = "eig_failure"
    exit_code = 21


class DegenerateEdge(BlochGreenError):
    code = "degenerate_edge"
    exit_code = 22


class NonConvexEdge(BlochGreenError):
    code = "nonconvex_edge"
    exit_code = 23


class AssumptionViolated(BlochGreenError):
    code = "assumption_violated"
    exit_code = 24

    def __init__(self, item: str, margin: float | None = None, message: str = ""):
        super().__init__(message or f"assumption {item} violated (margin={margin})",
                         item=item, margin=margin)
        self.item = item
        self.margin = margin


class NoGap(BlochGreenError):
    code = "no_gap"
    exit_code = 25


# -- continuation ----------------------------------------------------------
class BranchCollision(BlochGreenError):
    code = "branch_collision"
    exit_code = 30


class ComplexBranch(BlochGreenError):
    code = "complex_branch"
    exit_code = 31


class PairingDegenerate(BlochGreenError):
    code = "pairing_degenerate"
    exit_code = 32


class OutOfRegion(BlochGreenError):
    code = "out_of_region"
    exit_code = 33


class NoDescent(BlochGreenError):
    code = "no_descent"
    exit_code = 34


# -- asymptotics -----------------------------------------------------------
class DirectionMismatch(BlochGreenError):
    code = "direction_mismatch"
    exit_code = 40


class DimensionTooLow(BlochGreenError):
    code = "dimension_too_low"
    exit_code = 41


# -- oracles ---------------------------------------------------------------
class OnSpectrum(BlochGreenError):
    code = "on_spectrum"
    exit_code = 50


class Budget(BlochGreenError):
    code = "budget"
    exit_code = 51


class PoorFit(BlochGreenError):
    code = "poor_fit"
    exit_code = 52


class Indefinite(BlochGreenError):
    code = "indefinite"
    exit_code = 53


class SolverFailure(BlochGreenError):
    code = "solver_failure"
    exit_code = 54


# -- nonsymmetric theory ---------------------------------------------------
class NoConvergence(BlochGreenError):
    code = "no_convergence"
    exit_code = 60


def all_error_classes() -> list[type[BlochGreenError]]:
    """Every concrete error class, depth first."""
    out = []
    stack = [BlochGreenError]
    while stack:
        cls = stack.pop()
        out.append(cls)
        stack.extend(reversed(cls.__subclasses__()))
    return out
