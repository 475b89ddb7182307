"""Exception types shared across the package."""


class MdsError(Exception):
    """Base class for all package errors."""


class InvalidInput(MdsError, ValueError):
    """Raised when an argument violates a documented precondition."""


class BlockedAtom(MdsError):
    """Propagation hit an atom whose jump system is not uniquely solvable.

    Carries the atom coordinate and the full crossing outcome so callers can
    switch to subspace propagation instead of giving up.
    """

    def __init__(self, x, crossing, message=None):
        self.x = x
        self.crossing = crossing
        super().__init__(message or f"propagation blocked at atom x={x}")


class NonSymplectic(InvalidInput):
    """A base matrix was required to satisfy S*JS = J and does not."""


class NoAdmissibleMu(MdsError):
    """No real frame point found that avoids every atom's singular set."""


class MomentUnsolvable(MdsError):
    """The compactly supported correction's moment system has no solution."""


class GNotZero(MdsError):
    """Self-adjointness condition on boundary elements fails (G matrix != 0)."""

    def __init__(self, G):
        self.G = G
        super().__init__(f"boundary elements do not satisfy the zero-bracket condition, G={G!r}")


class NotInTmax(MdsError):
    """A pair (u, f) failed the maximal-relation residual check."""


class NotSymmetric(MdsError):
    """Operation requires a symmetric relation."""


class NotBoundedBelow(MdsError):
    """Operation requires a relation bounded below."""


class NotNonnegative(MdsError):
    """Operation requires a nonnegative relation."""


class AdjointMismatch(MdsError):
    """The supplied maximal relation is not the adjoint of the minimal one."""


class HasDensity(MdsError):
    """Operation requires a purely atomic weight measure."""


class LimitPointEnd(MdsError):
    """Operation requires limit-circle behaviour at both endpoints."""
