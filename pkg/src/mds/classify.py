"""Solution families through singular atoms, the zero-norm kernel, endpoint
classes and deficiency indices.

The central tool is affine-subspace propagation: starting from the full
two-dimensional space of values on the first piece, invertible atoms map the
family through uniquely, singular atoms cut it by the solvability condition
and extend it by the kernel of the forward jump matrix.  Everything else
(zero-norm kernel, deficiency counts, the witnesses at really bad points)
reads off that parametrization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, MomentUnsolvable
from .linalg import DEFAULT_TOL, Tolerances, kernel_basis, numeric_rank
from .problem import J, Problem, SourceTerm, atom_spectrum, xi_set
from .propagate import (
    FundamentalMatrix,
    PiecewiseFunction,
    _flow_matrices,
    adaptive_gauss,
    fundamental_matrix,
    linear_combination,
    w_inner,
)

__all__ = [
    "SolutionFamily",
    "solution_family",
    "compute_L0",
    "NonDefiniteFrame",
    "non_definite_frame",
    "EndpointClass",
    "classify_endpoint",
    "TruncationDiagnostic",
    "truncation_diagnostic",
    "DeficiencyReport",
    "deficiency_indices",
    "truncated_kernel_solution",
    "CutoffResult",
    "cutoff_element",
    "positive_norm_basis",
]

LIMIT_CIRCLE = "LimitCircle"
LIMIT_POINT_SUSPECTED = "LimitPointSuspected"


@dataclass(eq=False)
class SolutionFamily:
    """All balanced solutions of J u' + (q - λw) u = 0 on (a, b)."""

    lam: complex
    basis: list
    piece_maps: list  # per piece: 2 x dim map from parameters to the left-edge value

    @property
    def dim(self) -> int:
        return len(self.basis)

    def member(self, coeffs) -> PiecewiseFunction:
        return linear_combination(self.basis, np.asarray(coeffs, dtype=complex))


def _atom_jumps(atom, lam):
    half = 0.5 * (atom.dq.astype(complex) - lam * atom.dw.astype(complex))
    return J - half, J + half


def solution_family(p: Problem, lam, tol: Tolerances = DEFAULT_TOL) -> SolutionFamily:
    """Left-to-right affine-subspace propagation of the homogeneous equation."""
    gens = [J @ (pc.qd.astype(complex) - lam * pc.wd.astype(complex)) for pc in p.pieces]
    transfers = [_flow_matrices(g, pc.length)[0] for g, pc in zip(gens, p.pieces)]
    maps = [np.eye(2, dtype=complex)]
    for k, atom in enumerate(p.atoms):
        bm, bp = _atom_jumps(atom, lam)
        m_minus = bm @ transfers[k] @ maps[k]
        if numeric_rank(bp, tol) == 2:
            maps.append(np.linalg.solve(bp, m_minus))
            continue
        ran_perp = kernel_basis(bp.conj().T, tol)  # complement of ran B+
        constraint = ran_perp.basis.conj().T @ m_minus
        keep = kernel_basis(constraint, tol).basis
        maps = [m @ keep for m in maps]
        m_minus = m_minus @ keep
        particular, *_ = np.linalg.lstsq(bp, m_minus, rcond=None)
        fresh = kernel_basis(bp, tol).basis
        pad = np.zeros((2, fresh.shape[1]), dtype=complex)
        maps = [np.hstack([m, pad]) for m in maps]
        maps.append(np.hstack([particular, fresh]))
    dim = maps[0].shape[1]
    basis = []
    for j in range(dim):
        piece_left = [maps[i][:, j] for i in range(len(p.pieces))]
        atom_minus = [transfers[k] @ maps[k][:, j] for k in range(len(p.atoms))]
        atom_plus = [maps[k + 1][:, j] for k in range(len(p.atoms))]
        srcs = [np.zeros(2, dtype=complex)] * len(p.pieces)
        basis.append(PiecewiseFunction(p, lam, piece_left, gens, srcs, atom_minus, atom_plus))
    return SolutionFamily(lam, basis, maps)


def _zero_norm_coefficients(p: Problem, fam: SolutionFamily, tol: Tolerances) -> np.ndarray:
    """Coefficient basis of the family members with w·u = 0 as a measure."""
    if fam.dim == 0:
        return np.zeros((0, 0), dtype=complex)
    rows = []
    transfers = [_flow_matrices(J @ (pc.qd.astype(complex) - fam.lam * pc.wd.astype(complex)), pc.length)[0] for pc in p.pieces]
    for k, at in enumerate(p.atoms):
        if np.any(at.dw != 0.0):
            balanced = 0.5 * (transfers[k] @ fam.piece_maps[k] + fam.piece_maps[k + 1])
            rows.append(at.dw.astype(complex) @ balanced)
    for i, pc in enumerate(p.pieces):
        if np.any(pc.wd != 0.0):
            g = J @ (pc.qd.astype(complex) - fam.lam * pc.wd.astype(complex))
            rows.append(pc.wd.astype(complex) @ fam.piece_maps[i])
            rows.append(pc.wd.astype(complex) @ g @ fam.piece_maps[i])
    if not rows:
        return np.eye(fam.dim, dtype=complex)
    return kernel_basis(np.vstack(rows), tol).basis


def compute_L0(p: Problem, tol: Tolerances = DEFAULT_TOL) -> list:
    """Basis of the solutions of J u' + q u = 0 with zero w-seminorm."""
    fam = solution_family(p, 0.0, tol)
    coeffs = _zero_norm_coefficients(p, fam, tol)
    return [fam.member(coeffs[:, j]) for j in range(coeffs.shape[1])]


def positive_norm_basis(p: Problem, funcs, tol: Tolerances = DEFAULT_TOL) -> list:
    """Combinations of funcs forming a basis modulo the zero-norm directions."""
    m = len(funcs)
    if m == 0:
        return []
    gram = np.zeros((m, m), dtype=complex)
    for i in range(m):
        for j in range(i, m):
            gram[i, j] = w_inner(p, funcs[i], funcs[j], tol=tol)
            gram[j, i] = np.conj(gram[i, j])
    evals, vecs = np.linalg.eigh(0.5 * (gram + gram.conj().T))
    cut = max(tol.rank_rel * max(evals.max(initial=0.0), 0.0), tol.residual_abs)
    out = []
    for idx in np.where(evals > cut)[0]:
        out.append(linear_combination(funcs, vecs[:, idx] / np.sqrt(evals[idx])))
    return out


@dataclass(eq=False)
class NonDefiniteFrame:
    """The distinguished directions of a problem with a one-dimensional kernel."""

    mu: float
    e: np.ndarray
    e_perp: np.ndarray
    phi: PiecewiseFunction


def _realify(vec, tol: Tolerances) -> np.ndarray:
    vec = np.asarray(vec, dtype=complex)
    k = int(np.argmax(np.abs(vec)))
    phase = vec[k] / abs(vec[k])
    out = vec / phase
    if np.max(np.abs(out.imag)) > 1e2 * tol.residual_abs * (1 + np.max(np.abs(out.real))):
        raise InvalidInput("vector is not a complex multiple of a real vector")
    return out.real


def _admissible_real_mu(p: Problem, hint: float, tol: Tolerances) -> float:
    specs = [atom_spectrum(p, at, tol) for at in p.atoms]
    if any(s.really_bad for s in specs):
        raise InvalidInput("no globally admissible real spectral point: really bad points present")
    for k in range(100):
        mu = hint + ((k + 1) // 2) * (1.0 / 3.0) * (1 if k % 2 else -1) if k else hint
        if all(not s.contains(mu, tol) for s in specs):
            return float(mu)
    raise InvalidInput("no admissible real spectral point found near the hint")


def non_definite_frame(p: Problem, mu_hint: float = 0.0, tol: Tolerances = DEFAULT_TOL) -> NonDefiniteFrame:
    l0 = compute_L0(p, tol)
    if len(l0) != 1:
        raise InvalidInput("frame requires a one-dimensional zero-norm kernel")
    mu = _admissible_real_mu(p, mu_hint, tol)
    phi = l0[0]
    x0 = 0.5 * (p.pieces[0].lo + p.pieces[0].hi)
    U = fundamental_matrix(p, mu, x0, np.eye(2), tol)
    z = np.linalg.solve(U.eval(x0), phi.eval(x0))
    e_perp = _realify(z, tol)
    e_perp = e_perp / np.linalg.norm(e_perp)
    e = -J @ e_perp
    return NonDefiniteFrame(mu, e, e_perp, phi)


EndpointClass = str


def classify_endpoint(p: Problem, end: str, tol: Tolerances = DEFAULT_TOL) -> EndpointClass:
    """Finite-measure problems have regular, hence limit-circle, endpoints."""
    if end not in ("a", "b"):
        raise InvalidInput("endpoint must be 'a' or 'b'")
    return LIMIT_CIRCLE


@dataclass
class TruncationDiagnostic:
    """Heuristic growth data over expanding truncations; never proof-grade."""

    norms: list = field(default_factory=list)
    singular_counts: list = field(default_factory=list)
    limit_point_suspected: bool = False
    reason: str | None = None


def _pseudo_frame_norm(p: Problem, lam, tol: Tolerances) -> tuple[float, int]:
    """Total w-norm of a least-squares-propagated fundamental system at λ."""
    gens = [J @ (pc.qd.astype(complex) - lam * pc.wd.astype(complex)) for pc in p.pieces]
    transfers = [_flow_matrices(g, pc.length)[0] for g, pc in zip(gens, p.pieces)]
    piece_left = [None] * len(p.pieces)
    atom_minus = [None] * len(p.atoms)
    atom_plus = [None] * len(p.atoms)
    piece_left[0] = J.astype(complex)
    singular = 0
    for k, atom in enumerate(p.atoms):
        bm, bp = _atom_jumps(atom, lam)
        m_minus = transfers[k] @ piece_left[k]
        atom_minus[k] = m_minus
        if numeric_rank(bp, tol) == 2:
            nxt = np.linalg.solve(bp, bm @ m_minus)
        else:
            singular += 1
            nxt, *_ = np.linalg.lstsq(bp, bm @ m_minus, rcond=None)
        atom_plus[k] = nxt
        piece_left[k + 1] = nxt
    total = 0.0
    for col in range(2):
        fn = PiecewiseFunction(
            p,
            lam,
            [v[:, col] for v in piece_left],
            gens,
            [np.zeros(2, dtype=complex)] * len(p.pieces),
            [v[:, col] for v in atom_minus],
            [v[:, col] for v in atom_plus],
        )
        total += abs(w_inner(p, fn, fn, tol=tol))
    return total, singular


def truncation_diagnostic(generator, ms=range(1, 9), lam=1j, tol: Tolerances = DEFAULT_TOL) -> TruncationDiagnostic:
    """Heuristic limit-point screen for coefficients given on expanding intervals.

    ``generator(m)`` must return the truncated Problem.  The flag fires when
    the pseudo-propagated solution norms grow monotonically over at least 8
    truncations, or when the number of λ-singular atoms keeps growing (the
    singular set then accumulates at the moving endpoint).
    """
    diag = TruncationDiagnostic()
    for m in ms:
        norm, singular = _pseudo_frame_norm(generator(m), lam, tol)
        diag.norms.append(norm)
        diag.singular_counts.append(singular)
    n = diag.norms
    if len(n) >= 8 and all(b > a for a, b in zip(n, n[1:])) and n[-1] > 4.0 * max(n[0], tol.residual_abs):
        diag.limit_point_suspected = True
        diag.reason = "solution norms diverge monotonically"
    s = diag.singular_counts
    if len(s) >= 8 and all(b > a for a, b in zip(s, s[1:])):
        diag.limit_point_suspected = True
        diag.reason = (diag.reason + "; " if diag.reason else "") + "singular atoms accumulate"
    return diag


def truncated_kernel_solution(p: Problem, lam, x_cut: float, side: str, tol: Tolerances = DEFAULT_TOL) -> PiecewiseFunction:
    """Nontrivial solution vanishing beyond a singular atom.

    side='left': supported on (a, x_cut], left trace in ker B-(x_cut, λ);
    side='right': supported on [x_cut, b), right trace in ker B+(x_cut, λ).
    Atoms strictly on the supported side must be invertible at λ.
    """
    k_cut = p.atom_index(x_cut)
    if k_cut is None:
        raise InvalidInput("cut point must be an atom")
    gens = [J @ (pc.qd.astype(complex) - lam * pc.wd.astype(complex)) for pc in p.pieces]
    transfers = [_flow_matrices(g, pc.length)[0] for g, pc in zip(gens, p.pieces)]
    bm, bp = _atom_jumps(p.atoms[k_cut], lam)
    zero = np.zeros(2, dtype=complex)
    piece_left = [zero] * len(p.pieces)
    atom_minus = [zero] * len(p.atoms)
    atom_plus = [zero] * len(p.atoms)
    if side == "left":
        ker = kernel_basis(bm, tol)
        if ker.dim == 0:
            raise InvalidInput("backward jump matrix is invertible at the cut")
        val = ker.basis[:, 0]
        atom_minus[k_cut] = val
        for k in range(k_cut, 0, -1):  # value at right edge of piece k is val
            piece_left[k] = np.linalg.solve(transfers[k], val)
            bm_k, bp_k = _atom_jumps(p.atoms[k - 1], lam)
            if numeric_rank(bp_k, tol) < 2:
                raise InvalidInput("a singular atom lies inside the supported side")
            atom_plus[k - 1] = piece_left[k]
            val = np.linalg.solve(bm_k, bp_k @ piece_left[k])
            atom_minus[k - 1] = val
        piece_left[0] = np.linalg.solve(transfers[0], val)
    elif side == "right":
        ker = kernel_basis(bp, tol)
        if ker.dim == 0:
            raise InvalidInput("forward jump matrix is invertible at the cut")
        val = ker.basis[:, 0]
        atom_plus[k_cut] = val
        piece_left[k_cut + 1] = val
        for k in range(k_cut + 1, len(p.atoms)):
            u_minus = transfers[k] @ piece_left[k]
            atom_minus[k] = u_minus
            bm_k, bp_k = _atom_jumps(p.atoms[k], lam)
            if numeric_rank(bp_k, tol) < 2:
                raise InvalidInput("a singular atom lies inside the supported side")
            nxt = np.linalg.solve(bp_k, bm_k @ u_minus)
            atom_plus[k] = nxt
            piece_left[k + 1] = nxt
    else:
        raise InvalidInput("side must be 'left' or 'right'")
    srcs = [zero] * len(p.pieces)
    return PiecewiseFunction(p, lam, piece_left, gens, srcs, atom_minus, atom_plus)


@dataclass(eq=False)
class DeficiencyReport:
    endpoint_class_a: str
    endpoint_class_b: str
    dim_L0: int
    really_bad: list
    n_plus: int
    n_minus: int
    lambda_used: complex
    v0: PiecewiseFunction | None = None
    vN: PiecewiseFunction | None = None
    v0_norm: float | None = None
    vN_norm: float | None = None
    deficiency_basis: list = field(default_factory=list)
    lambda_real_contradiction: bool = False


def _pick_nonreal_lambda(p: Problem, atoms_subset, tol: Tolerances) -> complex:
    """A non-real λ at which every atom in the subset is invertible."""
    specs = [atom_spectrum(p, at, tol) for at in atoms_subset]
    for k in range(21):
        lam = 1j * (1.0 + k / 7.0)
        if all(s.really_bad or not s.contains(lam, tol) for s in specs):
            # really bad atoms never become invertible; they are excluded by the caller
            if all(not (not s.really_bad and s.contains(lam, tol)) for s in specs):
                return lam
    raise InvalidInput("could not find a clear non-real spectral point")


def deficiency_indices(p: Problem, tol: Tolerances = DEFAULT_TOL) -> DeficiencyReport:
    """Endpoint classes, zero-norm kernel, really bad points and n±.

    Without really bad points n± = max(0, #limit-circle ends − dim L0); with
    them the count is the number of the two truncated witnesses with positive
    norm.  Real coefficients force n+ = n-.
    """
    specs = [atom_spectrum(p, at, tol) for at in p.atoms]
    really_bad = [s.x for s in specs if s.really_bad]
    l0 = compute_L0(p, tol)
    dim_l0 = len(l0)
    contradiction = dim_l0 > 0 and any(
        not s.really_bad and any(abs(r.imag) > tol.root_abs * (1 + abs(r)) for r in s.roots)
        for s in specs
    )
    report = DeficiencyReport(
        endpoint_class_a=LIMIT_CIRCLE,
        endpoint_class_b=LIMIT_CIRCLE,
        dim_L0=dim_l0,
        really_bad=really_bad,
        n_plus=0,
        n_minus=0,
        lambda_used=1j,
        lambda_real_contradiction=contradiction,
    )
    if not really_bad:
        n = max(0, 2 - dim_l0)
        lam = _pick_nonreal_lambda(p, p.atoms, tol)
        fam = solution_family(p, lam, tol)
        report.deficiency_basis = positive_norm_basis(p, fam.basis, tol)
        report.n_plus = report.n_minus = n
        report.lambda_used = lam
        return report
    x1, xN = really_bad[0], really_bad[-1]
    left_atoms = [at for at in p.atoms if at.x < x1]
    right_atoms = [at for at in p.atoms if at.x > xN]
    lam = _pick_nonreal_lambda(p, left_atoms + right_atoms, tol)
    v0 = truncated_kernel_solution(p, lam, x1, "left", tol)
    vN = truncated_kernel_solution(p, lam, xN, "right", tol)
    report.v0, report.vN = v0, vN
    report.v0_norm = abs(w_inner(p, v0, v0, tol=tol))
    report.vN_norm = abs(w_inner(p, vN, vN, tol=tol))
    report.n_plus = report.n_minus = int(report.v0_norm > tol.residual_abs) + int(report.vN_norm > tol.residual_abs)
    report.lambda_used = lam
    report.deficiency_basis = [v for v, nrm in ((v0, report.v0_norm), (vN, report.vN_norm)) if nrm > tol.residual_abs]
    return report


@dataclass(eq=False)
class CutoffResult:
    v: PiecewiseFunction
    source: SourceTerm
    tail: str  # "zero" or "kernel-multiple"
    tail_coefficient: complex | None = None
    moment_residual: float = 0.0


def cutoff_element(p: Problem, lam, u: PiecewiseFunction, src: SourceTerm | None, tol: Tolerances = DEFAULT_TOL) -> CutoffResult:
    """Replace (u, λu+f) beyond the first piece so that the result vanishes
    (or falls onto the distinguished kernel direction) near b.

    The compactly supported correction h lives on the atoms and the interior
    pieces; its values solve the moment system ∫ U(·,λ̄)* w h = prescribed.
    """
    from .propagate import solve_ivp  # deferred to avoid import cycle in docs builds

    src = SourceTerm.zero(p) if src is None else src
    src.check_shape(p)
    specs = [atom_spectrum(p, at, tol) for at in p.atoms]
    if any(s.contains(lam, tol) for s in specs):
        raise InvalidInput("λ must avoid every atom's singular set")
    l0 = compute_L0(p, tol)
    if len(l0) > 1:
        raise InvalidInput("cutoff construction needs dim L0 <= 1")

    n = len(p.pieces)
    last = n - 1
    tail_sup = max(np.max(np.abs(u.piece_value(last, x))) for x in np.linspace(p.pieces[last].lo, p.pieces[last].hi, 5))
    if len(l0) == 0 and tail_sup <= tol.residual_abs:
        return CutoffResult(u, src, "zero", None, 0.0)

    x0 = 0.5 * (p.pieces[0].lo + p.pieces[0].hi)
    U = fundamental_matrix(p, lam, x0, np.eye(2), tol)
    Ubar = fundamental_matrix(p, np.conj(lam), x0, np.eye(2), tol)
    c = x0

    # moment columns: unit sources at every atom and interior piece
    cols = []
    placements = []  # ("atom", k, j) or ("piece", i, j)
    for k, at in enumerate(p.atoms):
        if np.any(at.dw != 0.0):
            block = Ubar.eval(at.x).conj().T @ at.dw.astype(complex)
            for j in range(2):
                cols.append(block[:, j])
                placements.append(("atom", k, j))
    for i in range(1, n - 1):
        pc = p.pieces[i]
        if np.any(pc.wd != 0.0):
            block = adaptive_gauss(lambda x: Ubar.eval(x).conj().T @ pc.wd.astype(complex), pc.lo, pc.hi, tol.quad_abs)
            for j in range(2):
                cols.append(block[:, j])
                placements.append(("piece", i, j))
    M = np.column_stack(cols) if cols else np.zeros((2, 0), dtype=complex)

    # bracket value entering the support region (piece-0 remainder uses src)
    W = Ubar.eval(c).conj().T @ J @ u.eval(c)
    pc0 = p.pieces[0]
    if np.any(pc0.wd != 0.0):
        fv = src.piece_values[0]
        W = W + adaptive_gauss(lambda x: Ubar.eval(x).conj().T @ (pc0.wd @ fv), c, pc0.hi, tol.quad_abs)

    if len(l0) == 0:
        target = -W
        rows = M
    else:
        frame = non_definite_frame(p, float(np.real(lam)) if np.imag(lam) == 0 else 0.0, tol)
        rows = frame.e[None, :].astype(complex) @ M
        target = np.array([-(frame.e @ W)])
    coeffs, *_ = np.linalg.lstsq(rows, target, rcond=None) if rows.size else (np.zeros(0, dtype=complex),)
    residual = float(np.linalg.norm(rows @ coeffs - target)) if rows.size else float(np.linalg.norm(target))
    if residual > tol.residual_abs * (1.0 + np.linalg.norm(target)):
        raise MomentUnsolvable(f"moment system residual {residual}")

    piece_vals = [np.array(v, dtype=complex) for v in src.piece_values]
    atom_vals = [np.array(v, dtype=complex) for v in src.atom_values]
    for i in range(1, n):
        piece_vals[i] = np.zeros(2, dtype=complex)
    for k in range(len(p.atoms)):
        atom_vals[k] = np.zeros(2, dtype=complex)
    for coeff, (kind, idx, j) in zip(coeffs, placements):
        if kind == "atom":
            atom_vals[idx][j] += coeff
        else:
            piece_vals[idx][j] += coeff
    g_src = SourceTerm(tuple(piece_vals), tuple(atom_vals))

    total = SourceTerm(
        tuple(pv for pv in g_src.piece_values),
        tuple(av for av in g_src.atom_values),
    )
    v = solve_ivp(p, lam, total, c, u.eval(c), tol)
    if len(l0) == 0:
        return CutoffResult(v, g_src, "zero", None, residual)
    xe = 0.5 * (p.pieces[last].lo + p.pieces[last].hi)
    tail_dir = U.eval(xe) @ frame.e
    denom = float(tail_dir.conj() @ tail_dir)
    alpha = complex(tail_dir.conj() @ v.piece_value(last, xe)) / denom
    return CutoffResult(v, g_src, "kernel-multiple", alpha, residual)
