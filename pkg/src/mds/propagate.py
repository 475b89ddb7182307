"""Propagation of solutions of J u' + (q - λ w) u = w f.

Between atoms the coefficients are constant, so each piece evolves by a matrix
exponential; atoms are crossed through the linear system
B+(x,λ) u⁺ - B-(x,λ) u⁻ = dw·f(x).  Solutions are balanced: the recorded value
at an atom is always (u⁺ + u⁻)/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import BlockedAtom, InvalidInput, NonSymplectic
from .linalg import DEFAULT_TOL, AffineSet, Tolerances, kernel_basis, numeric_rank
from .problem import J, Problem, SourceTerm

__all__ = [
    "AtomCrossing",
    "PiecewiseFunction",
    "FundamentalMatrix",
    "cross_atom",
    "solve_ivp",
    "fundamental_matrix",
    "variation_of_constants",
    "w_inner",
    "lagrange_defect",
    "scaled",
    "linear_combination",
    "adaptive_gauss",
]

_MINUS_J = -J  # equals J^{-1}

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


def _gauss(fn, lo: float, hi: float):
    mid, h = 0.5 * (lo + hi), 0.5 * (hi - lo)
    total = None
    for t, w in zip(_GL_NODES, _GL_WEIGHTS):
        v = w * np.asarray(fn(mid + h * t))
        total = v if total is None else total + v
    return h * total


def adaptive_gauss(fn, lo: float, hi: float, tol_abs: float, _depth: int = 0):
    """Adaptive Gauss-Legendre quadrature of a scalar/vector/matrix integrand."""
    if hi <= lo:
        return 0.0 * np.asarray(fn(lo))
    whole = _gauss(fn, lo, hi)
    mid = 0.5 * (lo + hi)
    halves = _gauss(fn, lo, mid) + _gauss(fn, mid, hi)
    if np.max(np.abs(halves - whole)) <= tol_abs or _depth >= 24:
        return halves
    return adaptive_gauss(fn, lo, mid, 0.5 * tol_abs, _depth + 1) + adaptive_gauss(
        fn, mid, hi, 0.5 * tol_abs, _depth + 1
    )


def _flow_matrices(G: np.ndarray, dt: float | complex) -> tuple[np.ndarray, np.ndarray]:
    """(exp(dt G), ∫_0^dt exp(s G) ds) via the augmented block exponential."""
    aug = np.zeros((4, 4), dtype=complex)
    aug[:2, :2] = G
    aug[:2, 2:] = np.eye(2)
    full = expm(aug * dt)
    return full[:2, :2], full[:2, 2:]


def _flow(G: np.ndarray, s: np.ndarray, dt: float, u: np.ndarray) -> np.ndarray:
    E, K = _flow_matrices(G, dt)
    return E @ u + K @ s


@dataclass(eq=False)
class AtomCrossing:
    """Outcome of the jump system at one atom."""

    kind: str  # "unique" | "affine" | "infeasible"
    value: np.ndarray | None = None
    affine: AffineSet | None = None

    @property
    def unique(self) -> bool:
        return self.kind == "unique"


def _solve_jump(m_to, m_from, u_from, rhs_extra, tol: Tolerances) -> AtomCrossing:
    """Solve m_to · x = m_from · u_from + rhs_extra for x."""
    rhs = m_from @ u_from + rhs_extra
    if numeric_rank(m_to, tol) == 2:
        return AtomCrossing("unique", value=np.linalg.solve(m_to, rhs))
    x, *_ = np.linalg.lstsq(m_to, rhs, rcond=None)
    residual = np.linalg.norm(m_to @ x - rhs)
    scale = 1.0 + np.linalg.norm(rhs)
    if residual > tol.residual_abs * scale:
        return AtomCrossing("infeasible", affine=AffineSet.infeasible(2))
    direction = kernel_basis(m_to, tol)
    return AtomCrossing("affine", affine=AffineSet(x, direction, True))


def cross_atom(p: Problem, atom, lam: complex, u_minus, f_at=None, tol: Tolerances = DEFAULT_TOL) -> AtomCrossing:
    """All admissible right traces u⁺ given the left trace u⁻ at an atom."""
    u_minus = np.asarray(u_minus, dtype=complex).reshape(2)
    f_at = np.zeros(2, dtype=complex) if f_at is None else np.asarray(f_at, dtype=complex).reshape(2)
    half = 0.5 * (atom.dq.astype(complex) - lam * atom.dw.astype(complex))
    b_minus, b_plus = J - half, J + half
    return _solve_jump(b_plus, b_minus, u_minus, atom.dw @ f_at, tol)


def _cross_atom_back(atom, lam, u_plus, f_at, tol) -> AtomCrossing:
    half = 0.5 * (atom.dq.astype(complex) - lam * atom.dw.astype(complex))
    b_minus, b_plus = J - half, J + half
    return _solve_jump(b_minus, b_plus, u_plus, -(atom.dw @ f_at), tol)


class PiecewiseFunction:
    """A balanced solution candidate: smooth per-piece data plus atom traces.

    Evaluation inside a piece uses the stored affine flow (generator and
    constant source); at atoms the one-sided traces are recorded and the
    balanced value is their average.
    """

    def __init__(self, problem: Problem, lam, piece_left, gens, srcs, atom_minus, atom_plus):
        self.problem = problem
        self.lam = lam
        self.piece_left = [np.asarray(v, dtype=complex).reshape(2) for v in piece_left]
        self.gens = [np.asarray(g, dtype=complex) for g in gens]
        self.srcs = [np.asarray(s, dtype=complex).reshape(2) for s in srcs]
        self.atom_minus = [np.asarray(v, dtype=complex).reshape(2) for v in atom_minus]
        self.atom_plus = [np.asarray(v, dtype=complex).reshape(2) for v in atom_plus]

    # -- evaluation -------------------------------------------------------
    def piece_value(self, i: int, x: float) -> np.ndarray:
        pc = self.problem.pieces[i]
        return _flow(self.gens[i], self.srcs[i], x - pc.lo, self.piece_left[i])

    def _piece_of(self, x: float) -> int:
        edges = self.problem.edges
        i = int(np.searchsorted(edges, x, side="right") - 1)
        return min(max(i, 0), len(self.problem.pieces) - 1)

    def plus(self, x: float) -> np.ndarray:
        if x == self.problem.b:
            raise InvalidInput("no right trace at the right endpoint")
        k = self.problem.atom_index(x)
        if k is not None:
            return self.atom_plus[k]
        return self.piece_value(self._piece_of(x), x)

    def minus(self, x: float) -> np.ndarray:
        if x == self.problem.a:
            raise InvalidInput("no left trace at the left endpoint")
        k = self.problem.atom_index(x)
        if k is not None:
            return self.atom_minus[k]
        i = self._piece_of(x) if x != self.problem.b else len(self.problem.pieces) - 1
        return self.piece_value(i, x)

    def eval(self, x: float) -> np.ndarray:
        """Balanced value: one-sided at the endpoints, (u⁺+u⁻)/2 at atoms."""
        if x == self.problem.a:
            return self.plus(x)
        if x == self.problem.b:
            return self.minus(x)
        k = self.problem.atom_index(x)
        if k is not None:
            return 0.5 * (self.atom_minus[k] + self.atom_plus[k])
        return self.piece_value(self._piece_of(x), x)

    def atom_value(self, k: int) -> np.ndarray:
        return 0.5 * (self.atom_minus[k] + self.atom_plus[k])

    def __mul__(self, c):
        return linear_combination([self], [c])

    __rmul__ = __mul__

    def __add__(self, other):
        return linear_combination([self, other], [1.0, 1.0])

    def __sub__(self, other):
        return linear_combination([self, other], [1.0, -1.0])


def linear_combination(funcs, coeffs) -> PiecewiseFunction:
    """Pointwise linear combination; all inputs must share problem and λ."""
    base = funcs[0]
    for f in funcs[1:]:
        if f.problem is not base.problem or f.lam != base.lam:
            raise InvalidInput("can only combine functions over the same problem and λ")
    def mix(attr):
        parts = [getattr(f, attr) for f in funcs]
        return [sum(c * p[i] for c, p in zip(coeffs, parts)) for i in range(len(parts[0]))]
    return PiecewiseFunction(
        base.problem,
        base.lam,
        mix("piece_left"),
        base.gens,
        mix("srcs"),
        mix("atom_minus"),
        mix("atom_plus"),
    )


class _Scaled:
    """λ·u (or any scalar multiple) viewed as a right-hand side."""

    def __init__(self, c, fn):
        self.c = c
        self.fn = fn

    def atom_value(self, k):
        return self.c * self.fn.atom_value(k)

    def piece_value(self, i, x):
        return self.c * self.fn.piece_value(i, x)


def scaled(c, fn) -> _Scaled:
    return _Scaled(c, fn)


def _generators(p: Problem, lam, f: SourceTerm | None):
    gens, srcs = [], []
    for i, pc in enumerate(p.pieces):
        gens.append(J @ (pc.qd.astype(complex) - lam * pc.wd.astype(complex)))
        if f is None:
            srcs.append(np.zeros(2, dtype=complex))
        else:
            srcs.append(_MINUS_J @ (pc.wd @ f.piece_values[i]))
    return gens, srcs


def solve_ivp(p: Problem, lam, f: SourceTerm | None, x0: float, u0, tol: Tolerances = DEFAULT_TOL) -> PiecewiseFunction:
    """Unique balanced solution through (x0, u0); raises BlockedAtom otherwise.

    x0 must be an endpoint or a point of continuity.
    """
    u0 = np.asarray(u0, dtype=complex).reshape(2)
    if f is not None:
        f.check_shape(p)
    if not p.a <= x0 <= p.b:
        raise InvalidInput("x0 outside [a, b]")
    if p.atom_index(x0) is not None:
        raise InvalidInput("x0 must be a point of continuity")
    gens, srcs = _generators(p, lam, f)
    n = len(p.pieces)
    if x0 == p.b:
        i0 = n - 1
    else:
        i0 = int(np.searchsorted(p.edges, x0, side="right") - 1)
    piece_left: list = [None] * n
    atom_minus: list = [None] * len(p.atoms)
    atom_plus: list = [None] * len(p.atoms)

    pc = p.pieces[i0]
    piece_left[i0] = _flow(gens[i0], srcs[i0], pc.lo - x0, u0)

    for i in range(i0, n - 1):  # march right, crossing atom i
        pc = p.pieces[i]
        u_minus = _flow(gens[i], srcs[i], pc.hi - pc.lo, piece_left[i])
        f_at = f.atom_values[i] if f is not None else None
        crossing = cross_atom(p, p.atoms[i], lam, u_minus, f_at, tol)
        if not crossing.unique:
            raise BlockedAtom(p.atoms[i].x, crossing)
        atom_minus[i], atom_plus[i] = u_minus, crossing.value
        piece_left[i + 1] = crossing.value

    for i in range(i0, 0, -1):  # march left, crossing atom i-1
        u_plus = piece_left[i]
        f_at = f.atom_values[i - 1] if f is not None else np.zeros(2, dtype=complex)
        crossing = _cross_atom_back(p.atoms[i - 1], lam, u_plus, f_at, tol)
        if not crossing.unique:
            raise BlockedAtom(p.atoms[i - 1].x, crossing)
        atom_minus[i - 1], atom_plus[i - 1] = crossing.value, u_plus
        pc = p.pieces[i - 1]
        piece_left[i - 1] = _flow(gens[i - 1], srcs[i - 1], pc.lo - pc.hi, crossing.value)

    return PiecewiseFunction(p, lam, piece_left, gens, srcs, atom_minus, atom_plus)


@dataclass(eq=False)
class FundamentalMatrix:
    """Two solution columns with a symplectic base value S at x0."""

    problem: Problem
    lam: complex
    x0: float
    S: np.ndarray
    col1: PiecewiseFunction
    col2: PiecewiseFunction

    def minus(self, x: float) -> np.ndarray:
        return np.column_stack([self.col1.minus(x), self.col2.minus(x)])

    def plus(self, x: float) -> np.ndarray:
        return np.column_stack([self.col1.plus(x), self.col2.plus(x)])

    def eval(self, x: float) -> np.ndarray:
        return np.column_stack([self.col1.eval(x), self.col2.eval(x)])


def is_symplectic(S, tol: Tolerances = DEFAULT_TOL) -> bool:
    S = np.asarray(S, dtype=complex)
    return np.linalg.norm(S.conj().T @ J @ S - J) <= tol.residual_abs * (1 + np.linalg.norm(S) ** 2)


def fundamental_matrix(p: Problem, lam, x0: float, S, tol: Tolerances = DEFAULT_TOL) -> FundamentalMatrix:
    """Fundamental matrix of J u' + (q - λ w) u = 0 with U(x0) = S, S*JS = J."""
    S = np.asarray(S, dtype=complex)
    if not is_symplectic(S, tol):
        raise NonSymplectic("base value must satisfy S*JS = J")
    col1 = solve_ivp(p, lam, None, x0, S[:, 0], tol)
    col2 = solve_ivp(p, lam, None, x0, S[:, 1], tol)
    return FundamentalMatrix(p, lam, x0, S, col1, col2)


def _clip_pieces(p: Problem, c: float, d: float):
    for i, pc in enumerate(p.pieces):
        lo, hi = max(pc.lo, c), min(pc.hi, d)
        if lo < hi:
            yield i, lo, hi


def w_inner(p: Problem, u, v, c: float | None = None, d: float | None = None, tol: Tolerances = DEFAULT_TOL) -> complex:
    """Semi-inner product ∫ u* w v over (c, d): atom sums plus density integrals.

    Atom values are the balanced ones.  u and v may be PiecewiseFunctions,
    SourceTerms or scaled wrappers; both must relate to the partition of p.
    """
    c = p.a if c is None else c
    d = p.b if d is None else d
    if not (p.a <= c <= d <= p.b):
        raise InvalidInput("window must satisfy a <= c <= d <= b")
    total = 0.0 + 0.0j
    for k, at in enumerate(p.atoms):
        if c < at.x < d and np.any(at.dw != 0.0):
            total += np.conj(u.atom_value(k)) @ (at.dw @ v.atom_value(k))
    for i, lo, hi in _clip_pieces(p, c, d):
        wd = p.pieces[i].wd
        if not np.any(wd != 0.0):
            continue
        fn = lambda x, i=i, wd=wd: np.conj(u.piece_value(i, x)) @ (wd @ v.piece_value(i, x))
        total += adaptive_gauss(fn, lo, hi, tol.quad_abs)
    return complex(total)


def lagrange_defect(p: Problem, vg, uf, c: float | None = None, d: float | None = None, tol: Tolerances = DEFAULT_TOL) -> complex:
    """(v*Ju)⁻(d) − (v*Ju)⁺(c) − ∫_(c,d) (v*wf − g*wu); ≈ 0 for solution pairs."""
    v, g = vg
    u, f = uf
    c = p.a if c is None else c
    d = p.b if d is None else d
    bracket_d = np.conj(v.minus(d)) @ (J @ u.minus(d))
    bracket_c = np.conj(v.plus(c)) @ (J @ u.plus(c))
    integral = 0.0 + 0.0j
    if f is not None:
        integral += w_inner(p, v, f, c, d, tol)
    if g is not None:
        integral -= w_inner(p, g, u, c, d, tol)
    return complex(bracket_d - bracket_c - integral)


def variation_of_constants(p: Problem, lam, f: SourceTerm | None, x0: float, u0, U: FundamentalMatrix, tol: Tolerances = DEFAULT_TOL) -> PiecewiseFunction:
    """Solution with u(x0) = S·u0 built from the fundamental matrix U at λ.

    Independent of solve_ivp's atom solves: traces come from evaluating
    u∓(x) = U∓(x,λ)(u0 ± J⁻¹ ∫ U(·,λ̄)* w f) with the measure integral
    accumulated over atoms and density pieces.
    """
    u0 = np.asarray(u0, dtype=complex).reshape(2)
    if U.x0 != x0 or U.lam != lam:
        raise InvalidInput("fundamental matrix must be based at (x0, λ)")
    if p.atom_index(x0) is not None:
        raise InvalidInput("x0 must be a point of continuity")
    f = SourceTerm.zero(p) if f is None else f
    f.check_shape(p)
    Ubar = fundamental_matrix(p, np.conj(lam), x0, U.S, tol)
    gens, srcs = _generators(p, lam, f)
    n = len(p.pieces)
    i0 = n - 1 if x0 == p.b else int(np.searchsorted(p.edges, x0, side="right") - 1)

    def piece_int(i, lo, hi):
        wd = p.pieces[i].wd
        if not np.any(wd != 0.0) or hi <= lo:
            return np.zeros(2, dtype=complex)
        fv = f.piece_values[i]
        fn = lambda x: Ubar.eval(x).conj().T @ (wd @ fv)
        return adaptive_gauss(fn, lo, hi, tol.quad_abs)

    piece_left: list = [None] * n
    atom_minus: list = [None] * len(p.atoms)
    atom_plus: list = [None] * len(p.atoms)

    # rightward: I(x) = ∫_[x0,x) U(·,λ̄)* w f
    acc = piece_int(i0, x0, p.pieces[i0].hi)
    for k in range(i0, len(p.atoms)):
        x_k = p.atoms[k].x
        atom_minus[k] = U.minus(x_k) @ (u0 + _MINUS_J @ acc)
        acc = acc + Ubar.eval(x_k).conj().T @ (p.atoms[k].dw @ f.atom_values[k])
        atom_plus[k] = U.plus(x_k) @ (u0 + _MINUS_J @ acc)
        piece_left[k + 1] = atom_plus[k]
        acc = acc + piece_int(k + 1, p.pieces[k + 1].lo, p.pieces[k + 1].hi)

    # leftward: u(x) uses -J⁻¹ ∫_(x,x0] U(·,λ̄)* w f
    acc = piece_int(i0, p.pieces[i0].lo, x0)
    for k in range(i0 - 1, -1, -1):
        x_k = p.atoms[k].x
        atom_plus[k] = U.plus(x_k) @ (u0 - _MINUS_J @ acc)
        acc = acc + Ubar.eval(x_k).conj().T @ (p.atoms[k].dw @ f.atom_values[k])
        atom_minus[k] = U.minus(x_k) @ (u0 - _MINUS_J @ acc)
        piece_left[k] = _flow(gens[k], srcs[k], p.pieces[k].lo - p.pieces[k].hi, atom_minus[k])
        acc = acc + piece_int(k, p.pieces[k].lo, p.pieces[k].hi)

    pc = p.pieces[i0]
    piece_left[i0] = _flow(gens[i0], srcs[i0], pc.lo - x0, U.eval(x0) @ u0)
    return PiecewiseFunction(p, lam, piece_left, gens, srcs, atom_minus, atom_plus)
