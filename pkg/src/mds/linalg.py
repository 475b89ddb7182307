"""Tolerance-controlled dense linear algebra for small complex matrices.

Every rank, kernel and subspace-equality decision in the package goes through
this module so that the singular/invertible dichotomies driving the theory are
made consistently, with one relative SVD cutoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput

__all__ = [
    "Tolerances",
    "DEFAULT_TOL",
    "Subspace",
    "AffineSet",
    "numeric_rank",
    "kernel_basis",
    "ortho_complement",
    "subspace_equal",
]


@dataclass(frozen=True)
class Tolerances:
    """Numerical thresholds used throughout.

    rank_rel: relative singular-value cutoff for rank decisions.
    residual_abs: absolute residual bound for invariant and membership checks.
    quad_abs: absolute quadrature error bound.
    root_abs: eigenvalue/root tolerance.
    """

    rank_rel: float = 1e-9
    residual_abs: float = 1e-8
    quad_abs: float = 1e-10
    root_abs: float = 1e-10

    def __post_init__(self):
        for name in ("rank_rel", "residual_abs", "quad_abs", "root_abs"):
            if not getattr(self, name) > 0:
                raise InvalidInput(f"tolerance {name} must be strictly positive")


DEFAULT_TOL = Tolerances()


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise InvalidInput("expected a matrix")
    if not np.all(np.isfinite(m.real)) or not np.all(np.isfinite(m.imag)):
        raise InvalidInput("matrix has non-finite entries")
    return m


def _check_gram(gram, dim: int) -> np.ndarray:
    if gram is None:
        return np.eye(dim, dtype=complex)
    gram = _as_matrix(gram)
    if gram.shape != (dim, dim):
        raise InvalidInput("gram matrix has wrong shape")
    if np.linalg.norm(gram - gram.conj().T) > 1e-12 * (1 + np.linalg.norm(gram)):
        raise InvalidInput("gram matrix must be hermitian")
    evals = np.linalg.eigvalsh(gram)
    if evals.min() <= 0:
        raise InvalidInput("gram matrix must be positive definite")
    return gram


def numeric_rank(m, tol: Tolerances = DEFAULT_TOL) -> int:
    """Number of singular values above ``rank_rel`` times the largest one."""
    m = _as_matrix(m)
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol.rank_rel * s[0]))


class Subspace:
    """A subspace of C^n stored through an orthonormal basis.

    Orthonormality is with respect to the gram form supplied at construction
    (the identity by default), which makes projections, complements and
    equality tests cheap and deterministic.
    """

    def __init__(self, ambient_dim: int, basis: np.ndarray, gram=None):
        self.ambient_dim = int(ambient_dim)
        basis = np.asarray(basis, dtype=complex).reshape(self.ambient_dim, -1)
        self.basis = basis
        self.gram = _check_gram(gram, self.ambient_dim)

    @classmethod
    def empty(cls, ambient_dim: int, gram=None) -> "Subspace":
        return cls(ambient_dim, np.zeros((ambient_dim, 0)), gram)

    @classmethod
    def full(cls, ambient_dim: int, gram=None) -> "Subspace":
        return cls.from_spanning(np.eye(ambient_dim), gram)

    @classmethod
    def from_spanning(cls, vectors, gram=None, tol: Tolerances = DEFAULT_TOL) -> "Subspace":
        """Orthonormalize spanning vectors (columns) under ``gram``."""
        vectors = np.asarray(vectors, dtype=complex)
        if vectors.ndim == 1:
            vectors = vectors[:, None]
        n = vectors.shape[0]
        g = _check_gram(gram, n)
        if vectors.shape[1] == 0:
            return cls.empty(n, g)
        chol = np.linalg.cholesky(g)
        w = chol.conj().T @ vectors
        u, s, _ = np.linalg.svd(w, full_matrices=False)
        if s.size == 0 or s[0] == 0.0:
            return cls.empty(n, g)
        keep = s > tol.rank_rel * s[0]
        basis = np.linalg.solve(chol.conj().T, u[:, keep])
        return cls(n, basis, g)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def project(self, v: np.ndarray) -> np.ndarray:
        """Gram-orthogonal projection of ``v`` onto the subspace."""
        v = np.asarray(v, dtype=complex)
        return self.basis @ (self.basis.conj().T @ (self.gram @ v))

    def contains(self, v: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> bool:
        v = np.asarray(v, dtype=complex)
        r = v - self.project(v)
        scale = max(1.0, float(np.sqrt(abs(v.conj() @ (self.gram @ v)).real)))
        return float(np.sqrt(abs(r.conj() @ (self.gram @ r)).real)) <= tol.residual_abs * scale

    def contains_subspace(self, other: "Subspace", tol: Tolerances = DEFAULT_TOL) -> bool:
        return all(self.contains(other.basis[:, j], tol) for j in range(other.dim))

    def __repr__(self):
        return f"Subspace(dim {self.dim} of C^{self.ambient_dim})"


@dataclass
class AffineSet:
    """Offset plus direction subspace; ``feasible=False`` means the empty set."""

    offset: np.ndarray
    direction: Subspace
    feasible: bool = True

    @classmethod
    def infeasible(cls, ambient_dim: int) -> "AffineSet":
        return cls(np.zeros(ambient_dim, dtype=complex), Subspace.empty(ambient_dim), False)

    @classmethod
    def point(cls, offset) -> "AffineSet":
        offset = np.asarray(offset, dtype=complex)
        return cls(offset, Subspace.empty(offset.shape[0]), True)


def kernel_basis(m, tol: Tolerances = DEFAULT_TOL) -> Subspace:
    """Orthonormal basis of the numerical null space of ``m``."""
    m = _as_matrix(m)
    ncols = m.shape[1]
    if ncols == 0:
        return Subspace.empty(0)
    u, s, vh = np.linalg.svd(m)
    if s.size == 0 or s[0] == 0.0:
        rank = 0
    else:
        rank = int(np.count_nonzero(s > tol.rank_rel * s[0]))
    basis = vh[rank:].conj().T
    return Subspace(ncols, basis)


def ortho_complement(s: Subspace, gram=None, tol: Tolerances = DEFAULT_TOL) -> Subspace:
    """Complement of ``s`` w.r.t. the inner product <x,y> = x* gram y."""
    g = _check_gram(gram if gram is not None else s.gram, s.ambient_dim)
    if s.dim == 0:
        return Subspace.full(s.ambient_dim, g)
    raw = kernel_basis(s.basis.conj().T @ g, tol)
    return Subspace.from_spanning(raw.basis, g, tol)


def subspace_equal(s1: Subspace, s2: Subspace, gram=None, tol: Tolerances = DEFAULT_TOL) -> bool:
    """True iff the two subspaces have equal dimension and span."""
    if s1.ambient_dim != s2.ambient_dim:
        raise InvalidInput("subspaces live in different ambient spaces")
    if s1.dim != s2.dim:
        return False
    if s1.dim == 0:
        return True
    g = _check_gram(gram, s1.ambient_dim) if gram is not None else None
    a = Subspace.from_spanning(s1.basis, g, tol) if g is not None else s1
    b = Subspace.from_spanning(s2.basis, g, tol) if g is not None else s2
    return b.contains_subspace(a, tol) and a.contains_subspace(b, tol)
