"""Finite-dimensional linear relations over weighted Hilbert models.

A relation is a subspace of H ⊕ H.  This module implements the abstract
operations (adjoint, inverse, shift, Friedrichs and Krein-von Neumann
extensions, von Neumann decomposition) exactly, by dense linear algebra, and
the bridge that realizes the maximal/minimal relations of a purely atomic
problem as concrete relations.  It is the independent oracle against which the
boundary-condition machinery is validated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AdjointMismatch,
    HasDensity,
    InvalidInput,
    MdsError,
    NotNonnegative,
    NotSymmetric,
)
from .linalg import DEFAULT_TOL, Subspace, Tolerances, kernel_basis, ortho_complement, subspace_equal
from .problem import Problem
from .propagate import _flow_matrices

__all__ = [
    "HilbertModel",
    "LinearRelation",
    "RelationChecks",
    "adjoint",
    "inverse",
    "shift",
    "checks",
    "friedrichs",
    "krein_von_neumann",
    "von_neumann_decomposition",
    "deficiency_space",
    "relation_spectrum",
    "relations_equal",
    "build_atomic",
    "AtomicBridge",
    "relation_to_dict",
]


@dataclass(frozen=True, eq=False)
class HilbertModel:
    """A concrete C^dim with a positive-definite gram matrix."""

    dim: int
    gram: np.ndarray | None = None

    def __post_init__(self):
        g = np.eye(self.dim, dtype=complex) if self.gram is None else np.asarray(self.gram, dtype=complex)
        if g.shape != (self.dim, self.dim):
            raise InvalidInput("gram shape mismatch")
        object.__setattr__(self, "gram", g)

    @property
    def doubled_gram(self) -> np.ndarray:
        g = np.zeros((2 * self.dim, 2 * self.dim), dtype=complex)
        g[: self.dim, : self.dim] = self.gram
        g[self.dim :, self.dim :] = self.gram
        return g


class LinearRelation:
    """A subspace of H ⊕ H, stored orthonormal under the doubled gram."""

    def __init__(self, model: HilbertModel, graph: Subspace):
        if graph.ambient_dim != 2 * model.dim:
            raise InvalidInput("graph must live in H ⊕ H")
        self.model = model
        self.graph = graph

    @classmethod
    def from_span(cls, model: HilbertModel, pairs, tol: Tolerances = DEFAULT_TOL) -> "LinearRelation":
        """Relation spanned by stacked (u; f) column vectors."""
        pairs = np.asarray(pairs, dtype=complex).reshape(2 * model.dim, -1)
        graph = Subspace.from_spanning(pairs, model.doubled_gram, tol)
        return cls(model, graph)

    @classmethod
    def zero(cls, model: HilbertModel) -> "LinearRelation":
        return cls(model, Subspace.empty(2 * model.dim, model.doubled_gram))

    @property
    def dim(self) -> int:
        return self.graph.dim

    @property
    def u_part(self) -> np.ndarray:
        return self.graph.basis[: self.model.dim]

    @property
    def f_part(self) -> np.ndarray:
        return self.graph.basis[self.model.dim :]

    def domain(self, tol: Tolerances = DEFAULT_TOL) -> Subspace:
        return Subspace.from_spanning(self.u_part, self.model.gram, tol)

    def ran(self, tol: Tolerances = DEFAULT_TOL) -> Subspace:
        return Subspace.from_spanning(self.f_part, self.model.gram, tol)

    def kernel(self, tol: Tolerances = DEFAULT_TOL) -> Subspace:
        """{u : (u, 0) ∈ S}."""
        k = kernel_basis(self.f_part, tol)
        return Subspace.from_spanning(self.u_part @ k.basis, self.model.gram, tol)

    def multivalued(self, tol: Tolerances = DEFAULT_TOL) -> Subspace:
        """{f : (0, f) ∈ S}."""
        k = kernel_basis(self.u_part, tol)
        return Subspace.from_spanning(self.f_part @ k.basis, self.model.gram, tol)

    def contains_pair(self, u, f, tol: Tolerances = DEFAULT_TOL) -> bool:
        vec = np.concatenate([np.asarray(u, dtype=complex), np.asarray(f, dtype=complex)])
        return self.graph.contains(vec, tol)

    def __repr__(self):
        return f"LinearRelation(dim {self.dim} in C^{self.model.dim} ⊕ C^{self.model.dim})"


def relations_equal(s1: LinearRelation, s2: LinearRelation, tol: Tolerances = DEFAULT_TOL) -> bool:
    return subspace_equal(s1.graph, s2.graph, tol=tol)


def adjoint(s: LinearRelation, tol: Tolerances = DEFAULT_TOL) -> LinearRelation:
    """S* = {(v,g): <g,u> = <v,f> for all (u,f) in S}."""
    d = s.model.dim
    swapped = np.vstack([s.f_part, -s.u_part])
    flipped = Subspace.from_spanning(swapped, s.model.doubled_gram, tol)
    return LinearRelation(s.model, ortho_complement(flipped, s.model.doubled_gram, tol))


def inverse(s: LinearRelation, tol: Tolerances = DEFAULT_TOL) -> LinearRelation:
    return LinearRelation.from_span(s.model, np.vstack([s.f_part, s.u_part]), tol)


def shift(s: LinearRelation, mu: float, tol: Tolerances = DEFAULT_TOL) -> LinearRelation:
    """(u, f) ↦ (u, f - μu)."""
    return LinearRelation.from_span(s.model, np.vstack([s.u_part, s.f_part - mu * s.u_part]), tol)


@dataclass
class RelationChecks:
    symmetric: bool
    self_adjoint: bool
    nonnegative: bool
    lower_bound: float | None
    form_defect: float


def _form_matrices(s: LinearRelation) -> tuple[np.ndarray, np.ndarray]:
    g = s.model.gram
    u, f = s.u_part, s.f_part
    return f.conj().T @ g @ u, u.conj().T @ g @ u


def checks(s: LinearRelation, tol: Tolerances = DEFAULT_TOL) -> RelationChecks:
    """Symmetry, self-adjointness, nonnegativity, greatest lower bound."""
    star = adjoint(s, tol)
    symmetric = star.graph.contains_subspace(s.graph, tol)
    self_adj = relations_equal(s, star, tol)
    H, N = _form_matrices(s)
    defect = float(np.linalg.norm(H - H.conj().T))
    Hh = 0.5 * (H + H.conj().T)
    evals, vecs = np.linalg.eigh(0.5 * (N + N.conj().T))
    cutoff = tol.rank_rel * max(evals.max(initial=0.0), 0.0)
    pos = evals > cutoff
    if not np.any(pos):
        return RelationChecks(symmetric, self_adj, True, None, defect)
    W = vecs[:, pos] / np.sqrt(evals[pos])
    alpha = float(np.linalg.eigvalsh(W.conj().T @ Hh @ W).min())
    return RelationChecks(symmetric, self_adj, alpha >= -tol.residual_abs, alpha, defect)


def _image_of(s: LinearRelation, u: np.ndarray) -> np.ndarray:
    """Some f with (u, f) ∈ S; u must be in dom S."""
    c, *_ = np.linalg.lstsq(s.u_part, u, rcond=None)
    return s.f_part @ c


def friedrichs(s: LinearRelation, tol: Tolerances = DEFAULT_TOL) -> LinearRelation:
    """Form extension of a symmetric, bounded-below relation.

    Built per the constructive route: lower bound α, the form scalar product
    ⟪u,v⟫ = <f_u,v> + (1-α)<u,v> on dom S, the solution operator R defined by
    <v,u> = ⟪Rv,u⟫, and T = R⁻¹ + (α-1)·id.  The sequence characterization is
    verified on the resulting basis.
    """
    c = checks(s, tol)
    if not c.symmetric:
        raise NotSymmetric("Friedrichs extension needs a symmetric relation")
    alpha = 0.0 if c.lower_bound is None else c.lower_bound
    g = s.model.gram
    n = s.model.dim
    dom = s.domain(tol)
    Q = dom.basis
    k = Q.shape[1]
    if k == 0:
        R = np.zeros((n, n), dtype=complex)
    else:
        FQ = np.column_stack([_image_of(s, Q[:, j]) for j in range(k)])
        phi = FQ.conj().T @ g @ Q + (1.0 - alpha) * np.eye(k)
        phi = 0.5 * (phi + phi.conj().T)
        R = Q @ np.linalg.solve(phi, Q.conj().T @ g)
    top = R
    bottom = np.eye(n) + (alpha - 1.0) * R
    result = LinearRelation.from_span(s.model, np.vstack([top, bottom]), tol)

    # sequence characterization: u ∈ dom S, (u,f) ∈ S*, <f,u> equals the form value
    star = adjoint(s, tol)
    for j in range(result.dim):
        u = result.u_part[:, j]
        f = result.f_part[:, j]
        if not star.graph.contains(result.graph.basis[:, j], tol):
            raise MdsError("extension escaped the adjoint")
        if not dom.contains(u, tol):
            raise MdsError("extension domain escaped the form domain")
        fu = _image_of(s, u)
        if abs(np.conj(f) @ g @ u - np.conj(fu) @ g @ u) > 100 * tol.residual_abs * (1 + np.linalg.norm(f) + np.linalg.norm(fu)):
            raise MdsError("form values do not match the sequence characterization")
    return result


def krein_von_neumann(s: LinearRelation, tol: Tolerances = DEFAULT_TOL) -> LinearRelation:
    """Inverse of the Friedrichs extension of the inverse relation."""
    c = checks(s, tol)
    if not c.symmetric:
        raise NotSymmetric("Krein-von Neumann extension needs a symmetric relation")
    if not c.nonnegative:
        raise NotNonnegative(f"relation is not nonnegative (lower bound {c.lower_bound})")
    result = inverse(friedrichs(inverse(s, tol), tol), tol)
    ker_star = adjoint(s, tol).kernel(tol)
    for j in range(ker_star.dim):
        if not result.contains_pair(ker_star.basis[:, j], np.zeros(s.model.dim), tol):
            raise MdsError("kernel containment failed for the Krein-von Neumann extension")
    return result


def deficiency_space(s: LinearRelation, lam: complex, tol: Tolerances = DEFAULT_TOL) -> LinearRelation:
    """D_λ = {(u, λu) ∈ S}."""
    k = kernel_basis(s.f_part - lam * s.u_part, tol)
    return LinearRelation.from_span(s.model, s.graph.basis @ k.basis, tol)


@dataclass
class VonNeumannDecomposition:
    closure_min: LinearRelation
    d_plus: LinearRelation
    d_minus: LinearRelation
    orthogonality_defect: float

    @property
    def n_plus(self) -> int:
        return self.d_plus.dim

    @property
    def n_minus(self) -> int:
        return self.d_minus.dim


def von_neumann_decomposition(s_min_closed: LinearRelation, s_max: LinearRelation, tol: Tolerances = DEFAULT_TOL) -> VonNeumannDecomposition:
    """S_max = closure(S_min) ⊕ D_i ⊕ D_{-i}, orthogonal in the graph inner product."""
    if not relations_equal(adjoint(s_min_closed, tol), s_max, tol):
        raise AdjointMismatch("maximal relation is not the adjoint of the minimal one")
    d_plus = deficiency_space(s_max, 1j, tol)
    d_minus = deficiency_space(s_max, -1j, tol)
    gg = s_max.model.doubled_gram
    blocks = [s_min_closed.graph.basis, d_plus.graph.basis, d_minus.graph.basis]
    defect = 0.0
    for i in range(3):
        for j in range(i + 1, 3):
            if blocks[i].size and blocks[j].size:
                defect = max(defect, float(np.abs(blocks[i].conj().T @ gg @ blocks[j]).max()))
    if s_max.dim != s_min_closed.dim + d_plus.dim + d_minus.dim:
        raise MdsError("graph dimensions do not add up in the decomposition")
    return VonNeumannDecomposition(s_min_closed, d_plus, d_minus, defect)


def relation_spectrum(s: LinearRelation, tol: Tolerances = DEFAULT_TOL) -> list[tuple[float, int]]:
    """Eigenvalues (with multiplicity) of the operator part of a self-adjoint relation."""
    dom = s.domain(tol)
    if dom.dim == 0:
        return []
    g = s.model.gram
    Q = dom.basis
    F = np.column_stack([_image_of(s, Q[:, j]) for j in range(dom.dim)])
    A = Q.conj().T @ g @ F
    evals = np.linalg.eigvalsh(0.5 * (A + A.conj().T))
    out: list[tuple[float, int]] = []
    for ev in evals:
        if out and abs(ev - out[-1][0]) <= tol.root_abs * (1 + abs(ev)):
            out[-1] = (out[-1][0], out[-1][1] + 1)
        else:
            out.append((float(ev), 1))
    return out


def relation_to_dict(s: LinearRelation) -> dict:
    def enc(vec):
        return [[float(z.real), float(z.imag)] for z in vec]

    return {
        "dim": s.dim,
        "model_dim": s.model.dim,
        "basis": [enc(s.graph.basis[:, j]) for j in range(s.dim)],
    }


# ---------------------------------------------------------------------------
# bridge: purely atomic problems as concrete relations
# ---------------------------------------------------------------------------


class AtomicBridge:
    """T_max / T_min of a problem with purely atomic w, as concrete relations.

    Model coordinates are the dw^{1/2}-components of the balanced values u(x_k)
    restricted to ran dw(x_k); in these coordinates the gram matrix is the
    identity and class projections are exact.  The full propagation parameter
    space is kept so membership conditions (boundary values, quasi-boundary
    rows) can be imposed directly.
    """

    def __init__(self, p: Problem, tol: Tolerances = DEFAULT_TOL):
        if p.has_w_density:
            raise HasDensity("the relation bridge needs a purely atomic w")
        self.problem = p
        self.tol = tol
        K = len(p.atoms)
        self.transfers = []
        for pc in p.pieces:
            G = np.array([[0.0, -1.0], [1.0, 0.0]]) @ pc.qd  # J @ qd at λ=0
            E, _ = _flow_matrices(G.astype(complex), pc.length)
            self.transfers.append(E)
        self.coord_maps = []  # r_k x 2, class coordinates of u(x_k)
        self.w_maps = []  # 2 x r_k, dw f = W y
        self.bm = []
        self.bp = []
        for at in p.atoms:
            evals, vecs = np.linalg.eigh(at.dw)
            keep = evals > tol.rank_rel * max(evals.max(initial=0.0), 1e-300)
            E_pos = vecs[:, keep]
            lam_pos = evals[keep]
            self.coord_maps.append((np.sqrt(lam_pos)[:, None] * E_pos.T).astype(complex))
            self.w_maps.append((E_pos * np.sqrt(lam_pos)[None, :]).astype(complex))
            half = 0.5 * at.dq.astype(complex)
            Jm = np.array([[0.0, -1.0], [1.0, 0.0]], dtype=complex)
            self.bm.append(Jm - half)
            self.bp.append(Jm + half)
        self.ranks = [m.shape[0] for m in self.coord_maps]
        self.dim = int(sum(self.ranks))
        self.model = HilbertModel(self.dim)
        self.n_pieces = K + 1
        self.nvars = 2 * self.n_pieces + self.dim
        self._y_offsets = []
        off = 2 * self.n_pieces
        for r in self.ranks:
            self._y_offsets.append(off)
            off += r

        self._C = self._constraint_rows()
        self._N_max = kernel_basis(self._C, tol).basis if self._C.size else np.eye(self.nvars, dtype=complex)
        self._class_map = self._build_class_map()
        self.T_max = self._relation_from_params(self._N_max)
        rows_min = np.zeros((4, self.nvars), dtype=complex)
        rows_min[0:2, 0:2] = np.eye(2)
        rows_min[2:4, 2 * K : 2 * K + 2] = np.eye(2)
        self._N_min = kernel_basis(np.vstack([self._C, rows_min]) if self._C.size else rows_min, tol).basis
        self.T_min = self._relation_from_params(self._N_min)
        self._L0_params = self._l0_directions()

    # -- assembly ----------------------------------------------------------
    def _c_slice(self, i: int) -> slice:
        return slice(2 * i, 2 * i + 2)

    def _y_slice(self, k: int) -> slice:
        return slice(self._y_offsets[k], self._y_offsets[k] + self.ranks[k])

    def _constraint_rows(self) -> np.ndarray:
        K = len(self.problem.atoms)
        C = np.zeros((2 * K, self.nvars), dtype=complex)
        for k in range(K):
            rows = slice(2 * k, 2 * k + 2)
            C[rows, self._c_slice(k + 1)] = self.bp[k]
            C[rows, self._c_slice(k)] = -self.bm[k] @ self.transfers[k]
            C[rows, self._y_slice(k)] = -self.w_maps[k]
        return C

    def _build_class_map(self) -> np.ndarray:
        """Rows: class coordinates (u-part then f-part) from raw variables."""
        M = np.zeros((2 * self.dim, self.nvars), dtype=complex)
        row = 0
        for k in range(len(self.problem.atoms)):
            r = self.ranks[k]
            M[row : row + r, self._c_slice(k)] = 0.5 * self.coord_maps[k] @ self.transfers[k]
            M[row : row + r, self._c_slice(k + 1)] = 0.5 * self.coord_maps[k]
            row += r
        for k in range(len(self.problem.atoms)):
            r = self.ranks[k]
            M[row : row + r, self._y_slice(k)] = np.eye(r)
            row += r
        return M

    def _relation_from_params(self, N: np.ndarray) -> LinearRelation:
        if N.size == 0:
            return LinearRelation.zero(self.model)
        return LinearRelation.from_span(self.model, self._class_map @ N, self.tol)

    def _l0_directions(self) -> np.ndarray:
        """Parameter directions spanning the zero-norm solutions with f = 0."""
        rows = [self._C] if self._C.size else []
        sel_y = np.zeros((self.dim, self.nvars), dtype=complex)
        sel_y[:, 2 * self.n_pieces :] = np.eye(self.dim)
        rows.append(sel_y)
        rows.append(self._class_map[: self.dim])  # zero u-class
        return kernel_basis(np.vstack(rows), self.tol).basis

    # -- accessors ---------------------------------------------------------
    def u_at_a_rows(self) -> np.ndarray:
        rows = np.zeros((2, self.nvars), dtype=complex)
        rows[:, self._c_slice(0)] = np.eye(2)
        return rows

    def u_at_b_rows(self) -> np.ndarray:
        rows = np.zeros((2, self.nvars), dtype=complex)
        rows[:, self._c_slice(self.n_pieces - 1)] = self.transfers[-1]
        return rows

    def domain_values_at_a(self) -> np.ndarray:
        """Span of u(a) over all pairs in the maximal relation."""
        return self.u_at_a_rows() @ self._N_max

    def domain_values_at_b(self) -> np.ndarray:
        return self.u_at_b_rows() @ self._N_max

    def restricted_relation(self, condition_rows: np.ndarray, quotient_l0: bool = True) -> LinearRelation:
        """Members of T_max whose (possibly re-represented) raw variables satisfy rows = 0.

        With ``quotient_l0`` the condition only needs to hold for some balanced
        representative, i.e. after adding a zero-norm solution.
        """
        rows = np.asarray(condition_rows, dtype=complex).reshape(-1, self.nvars)
        eff = rows @ self._N_max
        if quotient_l0 and self._L0_params.size:
            reachable = Subspace.from_spanning(rows @ self._L0_params, tol=self.tol)
            if reachable.dim:
                comp = ortho_complement(reachable, tol=self.tol)
                eff = comp.basis.conj().T @ eff
        K = kernel_basis(eff, self.tol)
        return self._relation_from_params(self._N_max @ K.basis)

    def minimal_closure_by_boundary(self) -> LinearRelation:
        """Pairs with a representative whose brackets at both ends vanish.

        The bracket v(x)*J u(x) must vanish at a against every admissible
        domain value v(a), and likewise at b.
        """
        J = np.array([[0.0, -1.0], [1.0, 0.0]], dtype=complex)
        Va = Subspace.from_spanning(self.domain_values_at_a(), tol=self.tol)
        Vb = Subspace.from_spanning(self.domain_values_at_b(), tol=self.tol)
        rows = []
        if Va.dim:
            rows.append(Va.basis.conj().T @ J @ self.u_at_a_rows())
        if Vb.dim:
            rows.append(Vb.basis.conj().T @ J @ self.u_at_b_rows())
        if not rows:
            return self.T_max
        return self.restricted_relation(np.vstack(rows), quotient_l0=True)


def build_atomic(p: Problem, tol: Tolerances = DEFAULT_TOL) -> AtomicBridge:
    """Realize T_max and T_min of a purely atomic problem as linear relations."""
    return AtomicBridge(p, tol)
