"""Problem data: the interval, the two matrix measures, and the jump matrices.

A problem is the system J u' + q u = w f on a finite interval (a, b), where q
and w are 2x2 matrix measures made of finitely many atoms plus piecewise
constant densities.  Atoms carry masses dq (hermitian) and dw (PSD); solutions
may jump at atoms through the linear systems governed by the matrices
B±(x, λ) = J ± (dq - λ·dw)/2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .linalg import DEFAULT_TOL, Subspace, Tolerances, numeric_rank

__all__ = [
    "J",
    "Atom",
    "DensityPiece",
    "Problem",
    "SourceTerm",
    "AtomSpectrum",
    "ValidationReport",
    "make_problem",
    "validate_problem",
    "jump_matrices",
    "atom_spectrum",
    "xi_set",
    "clip_problem",
    "split_at_really_bad",
    "SplitResult",
    "load_problem",
    "problem_to_dict",
]

J = np.array([[0.0, -1.0], [1.0, 0.0]])

PLUS_SIDE = "PlusSide"
MINUS_SIDE = "MinusSide"
EITHER_SIDE = "Either"


def _mat2(m, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (2, 2):
        raise InvalidInput(f"{name} must be a real 2x2 matrix")
    return m


@dataclass(frozen=True, eq=False)
class Atom:
    """A point mass: dq = q({x}), dw = w({x})."""

    x: float
    dq: np.ndarray
    dw: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dq", _mat2(self.dq, "dq"))
        object.__setattr__(self, "dw", _mat2(self.dw, "dw"))


@dataclass(frozen=True, eq=False)
class DensityPiece:
    """Constant density matrices on the open interval (lo, hi)."""

    lo: float
    hi: float
    qd: np.ndarray
    wd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "qd", _mat2(self.qd, "qd"))
        object.__setattr__(self, "wd", _mat2(self.wd, "wd"))
        if not self.lo < self.hi:
            raise InvalidInput("piece must have lo < hi")

    @property
    def length(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True, eq=False)
class Problem:
    a: float
    b: float
    atoms: tuple
    pieces: tuple

    @property
    def edges(self) -> np.ndarray:
        """Piece boundaries: a, atom coordinates, b."""
        return np.array([self.a] + [at.x for at in self.atoms] + [self.b])

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def has_w_density(self) -> bool:
        return any(np.any(pc.wd != 0.0) for pc in self.pieces)

    @property
    def has_density(self) -> bool:
        return any(np.any(pc.wd != 0.0) or np.any(pc.qd != 0.0) for pc in self.pieces)

    def atom_index(self, x: float) -> int | None:
        for k, at in enumerate(self.atoms):
            if at.x == x:
                return k
        return None


@dataclass(frozen=True, eq=False)
class SourceTerm:
    """Right-hand side f: one constant vector per piece, one value per atom."""

    piece_values: tuple
    atom_values: tuple

    @classmethod
    def zero(cls, p: Problem) -> "SourceTerm":
        z = np.zeros(2, dtype=complex)
        return cls(tuple(z for _ in p.pieces), tuple(z for _ in p.atoms))

    @classmethod
    def from_arrays(cls, pieces, atoms) -> "SourceTerm":
        return cls(
            tuple(np.asarray(v, dtype=complex).reshape(2) for v in pieces),
            tuple(np.asarray(v, dtype=complex).reshape(2) for v in atoms),
        )

    def atom_value(self, k: int) -> np.ndarray:
        return self.atom_values[k]

    def piece_value(self, i: int, x: float) -> np.ndarray:
        return self.piece_values[i]

    def check_shape(self, p: Problem):
        if len(self.piece_values) != len(p.pieces) or len(self.atom_values) != len(p.atoms):
            raise InvalidInput("source term does not match the problem partition")


def make_problem(a, b, atoms=(), q_density=(), w_density=()) -> Problem:
    """Assemble a Problem, splitting the interval at atoms and density breaks.

    ``q_density`` and ``w_density`` are iterables of (lo, hi, matrix); omitted
    ranges mean zero density.
    """
    a, b = float(a), float(b)
    if not (np.isfinite(a) and np.isfinite(b) and a < b):
        raise InvalidInput("need finite endpoints with a < b")
    atoms = tuple(
        at if isinstance(at, Atom) else Atom(float(at[0]), at[1], at[2]) for at in atoms
    )
    atoms = tuple(sorted(atoms, key=lambda at: at.x))
    q_density = [(float(lo), float(hi), _mat2(m, "q density")) for lo, hi, m in q_density]
    w_density = [(float(lo), float(hi), _mat2(m, "w density")) for lo, hi, m in w_density]

    cuts = {a, b}
    cuts.update(at.x for at in atoms)
    for lo, hi, _ in q_density + w_density:
        cuts.update((max(lo, a), min(hi, b)))
    edges = sorted(x for x in cuts if a <= x <= b)

    def density_at(entries, mid):
        total = np.zeros((2, 2))
        for lo, hi, m in entries:
            if lo < mid < hi:
                total = total + m
        return total

    pieces = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        pieces.append(DensityPiece(lo, hi, density_at(q_density, mid), density_at(w_density, mid)))
    return Problem(a, b, atoms, tuple(pieces))


@dataclass
class ValidationReport:
    ok: bool
    issues: list = field(default_factory=list)


def validate_problem(p: Problem, tol: Tolerances = DEFAULT_TOL) -> ValidationReport:
    """Check symmetry/positivity of the coefficients and partition consistency."""
    issues = []
    if not (np.isfinite(p.a) and np.isfinite(p.b) and p.a < p.b):
        issues.append("interval endpoints must be finite with a < b")
    xs = [at.x for at in p.atoms]
    if any(not p.a < x < p.b for x in xs):
        issues.append("atom coordinates must lie strictly inside (a, b)")
    if any(x2 <= x1 for x1, x2 in zip(xs, xs[1:])):
        issues.append("atom coordinates must be strictly increasing")
    for k, at in enumerate(p.atoms):
        if np.linalg.norm(at.dq - at.dq.T) > tol.residual_abs * (1 + np.linalg.norm(at.dq)):
            issues.append(f"atom {k} at x={at.x}: dq is not symmetric")
        if np.linalg.norm(at.dw - at.dw.T) > tol.residual_abs * (1 + np.linalg.norm(at.dw)):
            issues.append(f"atom {k} at x={at.x}: dw is not symmetric")
        elif np.linalg.eigvalsh(0.5 * (at.dw + at.dw.T)).min() < -tol.residual_abs:
            issues.append(f"atom {k} at x={at.x}: dw is not non-negative")
    for i, pc in enumerate(p.pieces):
        if np.linalg.norm(pc.qd - pc.qd.T) > tol.residual_abs * (1 + np.linalg.norm(pc.qd)):
            issues.append(f"piece {i}: q density is not symmetric")
        if np.linalg.norm(pc.wd - pc.wd.T) > tol.residual_abs * (1 + np.linalg.norm(pc.wd)):
            issues.append(f"piece {i}: w density is not symmetric")
        elif np.linalg.eigvalsh(0.5 * (pc.wd + pc.wd.T)).min() < -tol.residual_abs:
            issues.append(f"piece {i}: w density is not non-negative")
    expected = list(p.edges)
    actual = [p.pieces[0].lo] + [pc.hi for pc in p.pieces] if p.pieces else []
    if not p.pieces or len(actual) != len(expected) or np.max(np.abs(np.array(actual) - np.array(expected))) > 0:
        issues.append("pieces do not tile (a, b) with boundaries at the atoms")
    return ValidationReport(ok=not issues, issues=issues)


def jump_matrices(p: Problem, x: float, lam: complex) -> tuple[np.ndarray, np.ndarray]:
    """(B-, B+) at x: J ∓/± (dq - λ·dw)/2; (J, J) at a point of continuity."""
    if not p.a < x < p.b:
        raise InvalidInput("x must lie strictly inside (a, b)")
    k = p.atom_index(x)
    if k is None:
        return J.astype(complex), J.astype(complex)
    at = p.atoms[k]
    half = 0.5 * (at.dq.astype(complex) - lam * at.dw.astype(complex))
    return J - half, J + half


def _atom_jumps(at: Atom, lam: complex) -> tuple[np.ndarray, np.ndarray]:
    half = 0.5 * (at.dq.astype(complex) - lam * at.dw.astype(complex))
    return J - half, J + half


def _range_subspace(m, tol: Tolerances) -> Subspace:
    return Subspace.from_spanning(np.asarray(m, dtype=complex), tol=tol)


@dataclass(eq=False)
class AtomSpectrum:
    """Roots of det B+(x, ·); ``roots is None`` means every λ is singular."""

    x: float
    roots: tuple | None
    really_bad: bool
    branch: str | None

    def contains(self, lam: complex, tol: Tolerances = DEFAULT_TOL) -> bool:
        if self.roots is None:
            return True
        return any(abs(lam - r) <= tol.root_abs * (1 + abs(lam)) for r in self.roots)


def atom_spectrum(p: Problem, atom: Atom, tol: Tolerances = DEFAULT_TOL) -> AtomSpectrum:
    """Identify det B+(x, ·) as a polynomial of degree <= 2 and classify the atom."""
    dets = []
    for lam in (0.0, 1.0, -1.0):
        _, bp = _atom_jumps(atom, lam)
        dets.append(np.linalg.det(bp))
    d0, d1, dm1 = dets
    c0 = d0
    c1 = 0.5 * (d1 - dm1)
    c2 = 0.5 * (d1 + dm1) - d0
    scale = tol.residual_abs * (1.0 + np.linalg.norm(atom.dq) + np.linalg.norm(atom.dw))
    if max(abs(c0), abs(c1), abs(c2)) <= scale:
        bm0, bp0 = _atom_jumps(atom, 0.0)
        ran_w = _range_subspace(atom.dw, tol)
        in_plus = _range_subspace(bp0, tol).contains_subspace(ran_w, tol)
        in_minus = _range_subspace(bm0, tol).contains_subspace(ran_w, tol)
        if in_plus and in_minus:
            branch = EITHER_SIDE
        elif in_plus:
            branch = PLUS_SIDE
        elif in_minus:
            branch = MINUS_SIDE
        else:  # cannot happen for a genuinely singular pencil
            branch = None
        return AtomSpectrum(atom.x, None, True, branch)
    if abs(c2) > scale:
        roots = np.roots([c2, c1, c0])
    elif abs(c1) > scale:
        roots = np.array([-c0 / c1])
    else:
        roots = np.array([])
    return AtomSpectrum(atom.x, tuple(roots.tolist()), False, None)


def xi_set(p: Problem, lam: complex, tol: Tolerances = DEFAULT_TOL) -> list[float]:
    """Atom coordinates where B±(x, λ) are singular."""
    return [at.x for at in p.atoms if atom_spectrum(p, at, tol).contains(lam, tol)]


def clip_problem(p: Problem, lo: float, hi: float) -> Problem:
    """Restriction of the coefficients to (lo, hi) ⊆ (a, b)."""
    if not (p.a <= lo < hi <= p.b):
        raise InvalidInput("clip window must be a nontrivial subinterval")
    q_entries, w_entries = [], []
    for pc in p.pieces:
        plo, phi = max(pc.lo, lo), min(pc.hi, hi)
        if plo < phi:
            q_entries.append((plo, phi, pc.qd))
            w_entries.append((plo, phi, pc.wd))
    atoms = [at for at in p.atoms if lo < at.x < hi]
    return make_problem(lo, hi, atoms, q_entries, w_entries)


@dataclass(eq=False)
class SplitResult:
    """Outcome of cutting a problem at a really bad point.

    ``bc_side`` tells which subproblem inherits the kernel boundary condition
    (with ``bc_vector`` spanning that kernel); the atom's own masses go to the
    opposite side, recorded in ``mass_side``.
    """

    left: Problem
    right: Problem
    side: str
    bc_side: str | None
    bc_vector: np.ndarray | None
    mass_side: str | None


def split_at_really_bad(p: Problem, x1: float, tol: Tolerances = DEFAULT_TOL) -> SplitResult:
    """Split (a,b) at a really bad point into two independent subproblems."""
    k = p.atom_index(x1)
    if k is None:
        raise InvalidInput(f"x={x1} is not an atom of the problem")
    spec = atom_spectrum(p, p.atoms[k], tol)
    if not spec.really_bad:
        raise InvalidInput(f"x={x1} is not a really bad point")

    left = clip_problem(p, p.a, x1)
    right = clip_problem(p, x1, p.b)

    bm0, bp0 = _atom_jumps(p.atoms[k], 0.0)
    from .linalg import kernel_basis  # local import to avoid cycle at module load

    if spec.branch == PLUS_SIDE:
        bc_side, mass_side = "left", "right"
        bc_vector = kernel_basis(bm0, tol).basis[:, 0]
    elif spec.branch == MINUS_SIDE:
        bc_side, mass_side = "right", "left"
        bc_vector = kernel_basis(bp0, tol).basis[:, 0]
    else:
        bc_side = mass_side = bc_vector = None
    return SplitResult(left, right, spec.branch, bc_side, bc_vector, mass_side)


def _num(v):
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise InvalidInput("complex numbers encode as [re, im]")
        return complex(v[0], v[1])
    return complex(v)


def _mat_from_json(m):
    return np.array([[float(m[0][0]), float(m[0][1])], [float(m[1][0]), float(m[1][1])]])


def load_problem(source) -> Problem:
    """Read the JSON problem encoding (path, file object, or dict)."""
    if isinstance(source, dict):
        data = source
    elif hasattr(source, "read"):
        data = json.load(source)
    else:
        with open(source) as fh:
            data = json.load(fh)
    try:
        a, b = data["interval"]
        atoms = [
            Atom(float(at["x"]), _mat_from_json(at["dq"]), _mat_from_json(at["dw"]))
            for at in data.get("atoms", [])
        ]
        q_density = [
            (entry["from"], entry["to"], _mat_from_json(entry["m"]))
            for entry in data.get("q_density", [])
        ]
        w_density = [
            (entry["from"], entry["to"], _mat_from_json(entry["m"]))
            for entry in data.get("w_density", [])
        ]
    except (KeyError, TypeError, IndexError) as exc:
        raise InvalidInput(f"malformed problem JSON: {exc}") from exc
    return make_problem(a, b, atoms, q_density, w_density)


def problem_to_dict(p: Problem) -> dict:
    out = {
        "interval": [p.a, p.b],
        "atoms": [
            {"x": at.x, "dq": at.dq.tolist(), "dw": at.dw.tolist()} for at in p.atoms
        ],
    }
    q_entries = [
        {"from": pc.lo, "to": pc.hi, "m": pc.qd.tolist()}
        for pc in p.pieces
        if np.any(pc.qd != 0.0)
    ]
    w_entries = [
        {"from": pc.lo, "to": pc.hi, "m": pc.wd.tolist()}
        for pc in p.pieces
        if np.any(pc.wd != 0.0)
    ]
    if q_entries:
        out["q_density"] = q_entries
    if w_entries:
        out["w_density"] = w_entries
    return out
