"""Exception types raised across the package."""

from __future__ import annotations


class PMPCError(RuntimeError):
    """Base class for solver and estimation failures."""


class QPInfeasibleError(PMPCError):
    """The convex subproblem was certified primal infeasible."""

    def __init__(self, message: str, scp_iteration: int | None = None):
        super().__init__(message)
        self.scp_iteration = scp_iteration


class ScpDivergenceError(PMPCError):
    """Deviation norms grew for several consecutive iterations.

    The standard remedy is a larger trust-region penalty, which the
    message suggests.
    """


class BeliefCollapseError(PMPCError):
    """Every hypothesis received (numerically) zero likelihood."""


class TrainingDivergedError(PMPCError):
    """Model training produced a non-finite loss.

    Carries the epoch index at which the loss left the finite range.
    """

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
