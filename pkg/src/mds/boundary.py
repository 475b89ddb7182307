"""Quasi-boundary frames, boundary-condition matrices and their canonical forms.

A quasi-boundary value is ǔ(x) = U(x,μ)*J u(x) for a symplectic fundamental
matrix U at a real spectral point μ; it has endpoint limits even when u does
not.  Self-adjoint restrictions of the maximal relation are kernels of
matrices A acting on the stacked quasi-boundary values, constrained by rank
and the symplectic-form identity A·diag(-J,J)·A* = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classify import compute_L0, non_definite_frame, solution_family
from .errors import GNotZero, InvalidInput, NoAdmissibleMu, NotInTmax
from .linalg import DEFAULT_TOL, Tolerances, kernel_basis, numeric_rank
from .problem import J, Problem, atom_spectrum, clip_problem
from .propagate import FundamentalMatrix, PiecewiseFunction, fundamental_matrix, w_inner
from .propagate import solve_ivp

__all__ = [
    "BIG_J",
    "QuasiFrame",
    "BoundaryValues",
    "BCMatrix",
    "CanonicalBC",
    "CoupledFrame",
    "make_frame",
    "quasi_values",
    "validate_bc",
    "canonicalize_bc",
    "canonical_matrix",
    "bc_from_deficiency",
    "extension_membership",
    "make_coupled_frame",
    "periodic_bc",
    "antiperiodic_bc",
    "separated_bc",
]

BIG_J = np.block([[-J, np.zeros((2, 2))], [np.zeros((2, 2)), J]]).astype(complex)


@dataclass(eq=False)
class QuasiFrame:
    """Symplectic fundamental matrices near each endpoint at a real μ.

    With canonical regular conventions (U_l(a,μ)=J, U_r(b,μ)=J) the
    quasi-boundary values equal the actual boundary values.  ``shared`` means
    one global fundamental matrix serves both ends.
    """

    mu: float
    U_left: FundamentalMatrix
    U_right: FundamentalMatrix
    left_problem: Problem
    right_problem: Problem
    shared: bool = False

    @property
    def left_interval(self) -> tuple[float, float]:
        return (self.left_problem.a, self.left_problem.b)

    @property
    def right_interval(self) -> tuple[float, float]:
        return (self.right_problem.a, self.right_problem.b)


def make_frame(p: Problem, mu_hint: float = 0.0, shared: bool = False, tol: Tolerances = DEFAULT_TOL) -> QuasiFrame:
    """Pick a real μ avoiding every finite singular set and build the frames.

    The candidate scan is mu_hint, mu_hint ± 1/3, mu_hint ± 2/3, …  Really bad
    points cannot be avoided; they clip the frame intervals instead.  With
    ``shared`` a single global fundamental matrix (base J at a) is used for
    both endpoints, which requires the absence of really bad points.
    """
    specs = [atom_spectrum(p, at, tol) for at in p.atoms]
    bad = [s.x for s in specs if s.really_bad]
    finite_specs = [s for s in specs if not s.really_bad]
    mu = None
    for k in range(100):
        cand = mu_hint + ((k + 1) // 2) * (1.0 / 3.0) * (1 if k % 2 == 1 else -1) if k else mu_hint
        if all(not s.contains(cand, tol) for s in finite_specs):
            mu = float(cand)
            break
    if mu is None:
        raise NoAdmissibleMu("no admissible real μ among 100 candidates")
    if shared:
        if bad:
            raise InvalidInput("a shared frame needs an atom-singularity-free μ on all of (a,b)")
        U = fundamental_matrix(p, mu, p.a, J, tol)
        return QuasiFrame(mu, U, U, p, p, shared=True)
    left_problem = clip_problem(p, p.a, bad[0]) if bad else p
    right_problem = clip_problem(p, bad[-1], p.b) if bad else p
    U_left = fundamental_matrix(left_problem, mu, left_problem.a, J, tol)
    U_right = fundamental_matrix(right_problem, mu, right_problem.b, J, tol)
    return QuasiFrame(mu, U_left, U_right, left_problem, right_problem)


@dataclass(eq=False)
class BoundaryValues:
    at_a: np.ndarray
    at_b: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.at_a, self.at_b])


def quasi_values(frame: QuasiFrame, u: PiecewiseFunction) -> BoundaryValues:
    """ǔ(a) = U_l(a,μ)*J u(a) and u⃗(b) = U_r(b,μ)*J u(b)."""
    a = frame.left_problem.a
    b = frame.right_problem.b
    at_a = frame.U_left.plus(a).conj().T @ J @ u.plus(a)
    at_b = frame.U_right.minus(b).conj().T @ J @ u.minus(b)
    return BoundaryValues(at_a, at_b)


def quasi_at(frame: QuasiFrame, u: PiecewiseFunction, x: float, side: str = "left") -> np.ndarray:
    """Frame contraction ǔ(x) at an interior point of a frame interval."""
    U = frame.U_left if side == "left" else frame.U_right
    return U.eval(x).conj().T @ J @ u.eval(x)


@dataclass(eq=False)
class BCMatrix:
    """Boundary-condition matrix: 2x4, 1x4, or 1x2 with an endpoint tag."""

    A: np.ndarray
    endpoint: str | None = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=complex)
        if self.A.ndim == 1:
            self.A = self.A[None, :]
        if self.A.shape not in ((2, 4), (1, 4), (1, 2)):
            raise InvalidInput("boundary matrix must be 2x4, 1x4 or 1x2")
        if self.A.shape == (1, 2) and self.endpoint not in ("a", "b"):
            raise InvalidInput("a 1x2 boundary matrix needs an endpoint tag")

    @property
    def shape_tag(self) -> str:
        return {(2, 4): "2x4", (1, 4): "1x4", (1, 2): "1x2"}[self.A.shape]

    def to_dict(self) -> dict:
        enc = [[[float(z.real), float(z.imag)] for z in row] for row in self.A]
        return {"A": enc, "shape": self.shape_tag, "endpoint": self.endpoint}

    @classmethod
    def from_dict(cls, data: dict) -> "BCMatrix":
        rows = [[complex(entry[0], entry[1]) for entry in row] for row in data["A"]]
        return cls(np.array(rows, dtype=complex), data.get("endpoint"))


def periodic_bc() -> BCMatrix:
    return BCMatrix(np.hstack([np.eye(2), -np.eye(2)]))


def antiperiodic_bc() -> BCMatrix:
    return BCMatrix(np.hstack([np.eye(2), np.eye(2)]))


def separated_bc(alpha: float, beta: float) -> BCMatrix:
    return BCMatrix(
        np.array(
            [[np.cos(alpha), np.sin(alpha), 0.0, 0.0], [0.0, 0.0, np.cos(beta), np.sin(beta)]],
            dtype=complex,
        )
    )


@dataclass
class BCValidation:
    ok: bool
    issues: list = field(default_factory=list)
    blocks_invertible: tuple | None = None


def validate_bc(bc: BCMatrix, tol: Tolerances = DEFAULT_TOL) -> BCValidation:
    """Rank and symplectic-form identity; block dichotomy for the 2x4 case."""
    A = bc.A
    issues = []
    rows = A.shape[0]
    if numeric_rank(A, tol) != rows:
        issues.append("boundary matrix must have full row rank")
    scale = 1.0 + float(np.linalg.norm(A)) ** 2
    if A.shape[1] == 4:
        form = A @ BIG_J @ A.conj().T
    else:
        form = A @ J @ A.conj().T
    if np.linalg.norm(form) > tol.residual_abs * scale:
        issues.append("boundary matrix violates the symplectic-form identity")
    blocks = None
    if A.shape == (2, 4):
        r1 = numeric_rank(A[:, :2], tol)
        r2 = numeric_rank(A[:, 2:], tol)
        blocks = (r1 == 2, r2 == 2)
        if (r1 == 2) != (r2 == 2):
            issues.append("endpoint blocks must be invertible together or singular together")
    return BCValidation(ok=not issues, issues=issues, blocks_invertible=blocks)


@dataclass(eq=False)
class CanonicalBC:
    """Canonical gauge: separated angles, a coupled symplectic S, or a single row."""

    kind: str  # "SeparatedPair" | "Coupled" | "CoupledRank1" | "SeparatedSingle"
    alpha: float | None = None
    beta: float | None = None
    S: np.ndarray | None = None
    endpoint: str | None = None


def _row_angle(row: np.ndarray, tol: Tolerances) -> float:
    """Angle in [0, pi) of a row that is a complex multiple of a real vector."""
    row = np.asarray(row, dtype=complex).reshape(-1)
    k = int(np.argmax(np.abs(row)))
    if abs(row[k]) == 0:
        raise InvalidInput("zero row has no angle")
    r = row / (row[k] / abs(row[k]))
    if np.max(np.abs(r.imag)) > 1e3 * tol.residual_abs * (1 + np.max(np.abs(r.real))):
        raise InvalidInput("row is not proportional to a real vector")
    r = r.real / np.linalg.norm(r.real)
    alpha = float(np.arctan2(r[1], r[0]))
    if alpha < 0:
        alpha += np.pi
    if abs(alpha - np.pi) <= 1e-12:
        alpha = 0.0
    return alpha


def canonicalize_bc(bc: BCMatrix, tol: Tolerances = DEFAULT_TOL) -> CanonicalBC:
    """Reduce a valid boundary matrix to its unique canonical form."""
    report = validate_bc(bc, tol)
    if not report.ok:
        raise InvalidInput("; ".join(report.issues))
    A = bc.A
    if A.shape == (1, 2):
        return CanonicalBC("SeparatedSingle", alpha=_row_angle(A[0], tol), endpoint=bc.endpoint)
    if A.shape == (1, 4):
        # admissible rows live in span{(0,-1,0,1), (0,0,1,0)} up to a phase
        row = A[0]
        scale = 1.0 + float(np.abs(row).max())
        if abs(row[0]) > tol.residual_abs * scale or abs(row[3] + row[1]) > tol.residual_abs * scale:
            raise InvalidInput("rank-one coupled row is not in the admissible span")
        vec = np.array([-row[1], row[2]])  # (sin-like, cos-like) up to phase
        k = int(np.argmax(np.abs(vec)))
        phase = vec[k] / abs(vec[k])
        s, t = (vec / phase).real
        alpha = float(np.arctan2(s, t))
        if alpha < 0:
            alpha += np.pi
        if abs(alpha - np.pi) <= 1e-12:
            alpha = 0.0
        return CanonicalBC("CoupledRank1", alpha=alpha)
    A1, A2 = A[:, :2], A[:, 2:]
    if numeric_rank(A1, tol) == 2:
        S = np.linalg.solve(A2, A1)
        return CanonicalBC("Coupled", S=S)
    # both blocks singular: separate the rows
    w = kernel_basis(A2.conj().T, tol).basis[:, 0]
    v = kernel_basis(A1.conj().T, tol).basis[:, 0]
    row_a = (w.conj() @ A)[0:2]
    row_b = (v.conj() @ A)[2:4]
    return CanonicalBC("SeparatedPair", alpha=_row_angle(row_a, tol), beta=_row_angle(row_b, tol))


def canonical_matrix(c: CanonicalBC) -> BCMatrix:
    """The boundary matrix of a canonical form."""
    if c.kind == "SeparatedPair":
        return separated_bc(c.alpha, c.beta)
    if c.kind == "Coupled":
        return BCMatrix(np.hstack([c.S, np.eye(2)]))
    if c.kind == "CoupledRank1":
        return BCMatrix(np.array([[0.0, -np.sin(c.alpha), np.cos(c.alpha), np.sin(c.alpha)]], dtype=complex))
    if c.kind == "SeparatedSingle":
        return BCMatrix(np.array([[np.cos(c.alpha), np.sin(c.alpha)]], dtype=complex), endpoint=c.endpoint)
    raise InvalidInput(f"unknown canonical kind {c.kind}")


def bc_from_deficiency(p: Problem, frame: QuasiFrame, elements, tol: Tolerances = DEFAULT_TOL) -> BCMatrix:
    """Boundary matrix of the restriction cut out by deficiency-space elements.

    ``elements`` are pairs (v_j, g_j) with both components solutions data; the
    self-adjointness condition is that the bracket matrix
    G_lk = (g_l* J g_k)⁻(b) − (g_l* J g_k)⁺(a) vanishes.
    """
    n = len(elements)
    if n not in (1, 2):
        raise InvalidInput("need one or two boundary elements")
    a, b = p.a, p.b
    G = np.zeros((n, n), dtype=complex)
    for l, (_, gl) in enumerate(elements):
        for k, (_, gk) in enumerate(elements):
            G[l, k] = np.conj(gl.minus(b)) @ J @ gk.minus(b) - np.conj(gl.plus(a)) @ J @ gk.plus(a)
    gscale = 1.0 + max(np.linalg.norm(np.conj(g.minus(b))) ** 2 for _, g in elements)
    if np.abs(G).max() > tol.residual_abs * gscale:
        raise GNotZero(G)
    stacked = np.column_stack([quasi_values(frame, v).stacked for v, _ in elements])
    if numeric_rank(stacked, tol) < n:
        raise InvalidInput("boundary elements are linearly dependent")
    rows = []
    for _, g in elements:
        qv = quasi_values(frame, g)
        rows.append(np.concatenate([qv.at_a.conj(), qv.at_b.conj()]) @ BIG_J)
    A = np.vstack(rows)
    if n == 1:
        scale = 1.0 + float(np.abs(A).max())
        if np.abs(A[0, 2:]).max() <= tol.residual_abs * scale:
            return BCMatrix(A[:, :2], endpoint="a")
        if np.abs(A[0, :2]).max() <= tol.residual_abs * scale:
            return BCMatrix(A[:, 2:], endpoint="b")
        return BCMatrix(A)
    return BCMatrix(A)


def tmax_residual(p: Problem, u: PiecewiseFunction, f, tol: Tolerances = DEFAULT_TOL) -> float:
    """Residual of J u' + q u = w f over atoms and sampled piece points."""
    worst = 0.0
    for k, at in enumerate(p.atoms):
        half = 0.5 * at.dq.astype(complex)
        r = (J + half) @ u.atom_plus[k] - (J - half) @ u.atom_minus[k] - at.dw @ f.atom_value(k)
        scale = 1.0 + np.linalg.norm(u.atom_plus[k]) + np.linalg.norm(u.atom_minus[k])
        worst = max(worst, float(np.linalg.norm(r)) / scale)
    for i, pc in enumerate(p.pieces):
        for x in np.linspace(pc.lo, pc.hi, 5)[1:-1]:
            ux = u.piece_value(i, x)
            du = u.gens[i] @ ux + u.srcs[i]
            r = J @ du + pc.qd @ ux - pc.wd @ f.piece_value(i, x)
            worst = max(worst, float(np.linalg.norm(r)) / (1.0 + np.linalg.norm(ux)))
    return worst


def extension_membership(p: Problem, frame: QuasiFrame, bc: BCMatrix, u: PiecewiseFunction, f, tol: Tolerances = DEFAULT_TOL, l0_basis=None) -> bool:
    """Does ([u],[f]) belong to the restriction cut out by ``bc``?

    The pair must satisfy the equation (checked by residuals, else NotInTmax).
    For non-definite problems the condition is minimized over the zero-norm
    coset, since membership is a statement about classes.
    """
    if tmax_residual(p, u, f, tol) > tol.residual_abs * 100:
        raise NotInTmax("pair fails the maximal-relation residual check")

    def stack_for(fn: PiecewiseFunction) -> np.ndarray:
        qv = quasi_values(frame, fn)
        if bc.A.shape[1] == 2:
            return qv.at_a if bc.endpoint == "a" else qv.at_b
        return qv.stacked

    value = bc.A @ stack_for(u)
    if l0_basis is None:
        l0_basis = compute_L0(p, tol)
    scale = 1.0 + float(np.linalg.norm(u.plus(p.a))) + float(np.linalg.norm(u.minus(p.b)))
    if l0_basis:
        cols = np.column_stack([bc.A @ stack_for(ell) for ell in l0_basis])
        coef, *_ = np.linalg.lstsq(cols, -value, rcond=None)
        value = value + cols @ coef
    return float(np.linalg.norm(value)) <= tol.residual_abs * scale


@dataclass(eq=False)
class CoupledFrame:
    """The rank-one coupled gauge: Φ = (φ, ψ) with φ spanning the zero-norm kernel."""

    problem: Problem
    x0: float
    mu: float
    phi: PiecewiseFunction
    psi: PiecewiseFunction
    p_value: complex

    def quasi(self, u: PiecewiseFunction, x: float, side: str = "balanced") -> np.ndarray:
        if side == "plus":
            phi_v, psi_v, u_v = self.phi.plus(x), self.psi.plus(x), u.plus(x)
        elif side == "minus":
            phi_v, psi_v, u_v = self.phi.minus(x), self.psi.minus(x), u.minus(x)
        else:
            phi_v, psi_v, u_v = self.phi.eval(x), self.psi.eval(x), u.eval(x)
        frame_mat = np.column_stack([phi_v, psi_v])
        return frame_mat.conj().T @ J @ u_v

    def stacked(self, u: PiecewiseFunction) -> np.ndarray:
        return np.concatenate([self.quasi(u, self.problem.a, "plus"), self.quasi(u, self.problem.b, "minus")])


def make_coupled_frame(p: Problem, mu_hint: float = 0.0, x0: float | None = None, tol: Tolerances = DEFAULT_TOL) -> CoupledFrame:
    """Build the Φ=(φ,ψ) frame of a non-definite problem without really bad points."""
    nd = non_definite_frame(p, mu_hint, tol)
    if x0 is None:
        x0 = 0.5 * (p.a + p.b)
        if p.atom_index(x0) is not None:
            lengths = [pc.length for pc in p.pieces]
            x0 += 0.1 * min(lengths)
    phi0 = nd.phi.eval(x0)
    k = int(np.argmax(np.abs(phi0)))
    phi = (1.0 / (phi0[k] / abs(phi0[k])) / np.linalg.norm(phi0)) * nd.phi
    psi = solve_ivp(p, nd.mu, None, x0, J @ phi.eval(x0), tol)
    fam = solution_family(p, 1j, tol)
    p_value = None
    for cand in fam.basis:
        norm2 = w_inner(p, cand, cand, tol=tol).real
        if norm2 > tol.residual_abs:
            frame_mat = np.column_stack([phi.plus(p.a), psi.plus(p.a)])
            cev = frame_mat.conj().T @ J @ cand.plus(p.a)
            beta = -cev[0]
            if abs(beta) <= tol.residual_abs:
                continue
            p_value = (1j - nd.mu) * w_inner(p, psi, cand, tol=tol) / beta
            break
    if p_value is None:
        raise InvalidInput("could not build a positive-norm deficiency element")
    if p_value.imag <= 0:
        raise InvalidInput("coupled frame parameter must have positive imaginary part")
    return CoupledFrame(p, x0, nd.mu, phi, psi, complex(p_value))
