"""Lowering of nonnegativity-on-a-region constraints to block-diagonal SDPs.

A constraint "expr(x) >= 0 on {g_i(x) >= 0 for all i}" with expr affine in
scalar decision variables is certified by the S-procedure template

    expr(x) - sum_i s_i(x) g_i(x)  =  sigma_0(x),

with each multiplier s_i and the residue sigma_0 sum-of-squares.  Every SOS
membership becomes a PSD Gram block plus coefficient-matching linear
equalities; ``SosProgram.assemble`` eliminates the equalities against a
particular solution and an orthonormal nullspace basis, leaving a pure
inequality-form SDP for :mod:`reachsynth.sdpcore`.

The quadratic part of the objective (an integral-norm penalty) is folded into
the SDP as a Schur-complement epigraph block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .polycore import Monomial, Polynomial, monomial_basis
from .problem import ControllerTemplate, ReachAvoidProblem
from .sdpcore import SdpBlock, SdpProblem

DEFAULT_GRAM_DEGREE_CAP = 6
PSD_JITTER = 1e-12


class DegreeOverflowError(ValueError):
    pass


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class SemialgebraicRegion:
    """Basic closed region {x : g_i(x) >= 0 for every generator g_i}."""

    generators: Tuple[Polynomial, ...]

    def __post_init__(self):
        if self.generators:
            n = self.generators[0].n_vars
            if any(g.n_vars != n for g in self.generators):
                raise ValueError("region generators must share the variable count")

    @property
    def n_vars(self) -> Optional[int]:
        return self.generators[0].n_vars if self.generators else None

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points satisfying every generator inequality."""
        pts = np.asarray(points, dtype=float)
        mask = np.ones(pts.shape[:-1], dtype=bool)
        for g in self.generators:
            mask &= g.evaluate(pts) >= 0
        return mask


def region_outside_target(problem: ReachAvoidProblem) -> SemialgebraicRegion:
    """closure(C \\ X_r) encoded as {h >= 0, h_r >= 0}."""
    return SemialgebraicRegion((problem.h, problem.h_r))


def region_safe(problem: ReachAvoidProblem) -> SemialgebraicRegion:
    """closure(C) encoded as {h >= 0}."""
    return SemialgebraicRegion((problem.h,))


def region_boundary_band(problem: ReachAvoidProblem, eps0: float) -> SemialgebraicRegion:
    """closure((C \\ D) \\ X_r) with D = {h - eps0 >= 0}: {h >= 0, eps0 - h >= 0, h_r >= 0}."""
    band = Polynomial.constant(problem.n, eps0) - problem.h
    return SemialgebraicRegion((problem.h, band, problem.h_r))


# ---------------------------------------------------------------------------
# affine-in-decisions expressions
# ---------------------------------------------------------------------------


@dataclass
class PolyExpr:
    """Polynomial whose coefficients depend affinely on scalar decision vars."""

    n_vars: int
    const: Polynomial
    linear: Dict[int, Polynomial] = field(default_factory=dict)

    @staticmethod
    def from_poly(p: Polynomial) -> "PolyExpr":
        return PolyExpr(p.n_vars, p, {})

    def add_const(self, p: Polynomial) -> "PolyExpr":
        return PolyExpr(self.n_vars, self.const + p, dict(self.linear))

    def add_linear(self, var: int, p: Polynomial) -> "PolyExpr":
        lin = dict(self.linear)
        lin[var] = lin.get(var, Polynomial.zero(self.n_vars)) + p
        return PolyExpr(self.n_vars, self.const, lin)

    @property
    def degree(self) -> int:
        d = self.const.degree
        for p in self.linear.values():
            d = max(d, p.degree)
        return d


@dataclass(frozen=True)
class LinExpr:
    """Affine scalar a . v + b over decision variables."""

    coeffs: Tuple[Tuple[int, float], ...]
    const: float = 0.0


# ---------------------------------------------------------------------------
# program container
# ---------------------------------------------------------------------------


@dataclass
class SosConstraintSpec:
    label: str
    expr: PolyExpr
    region: SemialgebraicRegion
    mult_degree: int


@dataclass
class QuadObjective:
    """t >= v_c^T M v_c - 2 m . v_c + const, epigraph variable t."""

    t_var: int
    coeff_vars: Tuple[int, ...]
    M: np.ndarray
    m: np.ndarray
    const: float


class SosProgram:
    """Scalar decisions + SOS constraints + scalar bounds + objective data."""

    def __init__(self, n_state_vars: int):
        self.n_state_vars = n_state_vars
        self.var_names: List[str] = []
        self.sos_constraints: List[SosConstraintSpec] = []
        self.linear_ineqs: List[Tuple[str, LinExpr]] = []
        self.quad_objective: Optional[QuadObjective] = None
        self.linear_objective: Dict[int, float] = {}

    # variables --------------------------------------------------------

    def add_scalar(
        self,
        name: str,
        lo: Optional[float] = None,
        hi: Optional[float] = None,
    ) -> int:
        idx = len(self.var_names)
        self.var_names.append(name)
        if lo is not None:
            self.add_linear_ineq(f"{name}>= {lo}", LinExpr(((idx, 1.0),), -lo))
        if hi is not None:
            self.add_linear_ineq(f"{name}<= {hi}", LinExpr(((idx, -1.0),), hi))
        return idx

    def add_scalar_vector(
        self, prefix: str, count: int, lo=None, hi=None
    ) -> list[int]:
        return [self.add_scalar(f"{prefix}[{i}]", lo, hi) for i in range(count)]

    # constraints ------------------------------------------------------

    def add_sos(
        self,
        label: str,
        expr: PolyExpr,
        region: SemialgebraicRegion,
        mult_degree: int,
    ) -> None:
        if expr.n_vars != self.n_state_vars:
            raise ValueError("expression has the wrong number of state variables")
        self.sos_constraints.append(SosConstraintSpec(label, expr, region, mult_degree))

    def add_linear_ineq(self, label: str, lin: LinExpr) -> None:
        self.linear_ineqs.append((label, lin))

    # objective --------------------------------------------------------

    def set_quadratic_objective(
        self,
        t_var: int,
        coeff_vars: Sequence[int],
        M: np.ndarray,
        m: np.ndarray,
        const: float,
    ) -> None:
        M = np.asarray(M, dtype=float)
        if np.abs(M - M.T).max(initial=0.0) > 1e-10 * max(1.0, np.abs(M).max()):
            raise ValueError("moment matrix must be symmetric")
        eigs = np.linalg.eigvalsh(0.5 * (M + M.T))
        if eigs.min() < -1e-10 * max(1.0, eigs.max()):
            raise ValueError("moment matrix must be PSD")
        self.quad_objective = QuadObjective(
            t_var, tuple(coeff_vars), 0.5 * (M + M.T), np.asarray(m, float), const
        )

    def add_objective_term(self, var: int, weight: float) -> None:
        self.linear_objective[var] = self.linear_objective.get(var, 0.0) + weight

    # assembly ----------------------------------------------------------

    def assemble(self, gram_degree_cap: int = DEFAULT_GRAM_DEGREE_CAP) -> "AssembledSdp":
        return _assemble(self, gram_degree_cap)


# ---------------------------------------------------------------------------
# quadrature and the moment objective
# ---------------------------------------------------------------------------


def quadrature_grid(
    problem: ReachAvoidProblem, resolution: int = 201
) -> Tuple[np.ndarray, float]:
    """Midpoint grid over the bounding box restricted to {h > 0}.

    Returns the retained points and the per-cell volume.  The same grid backs
    both the synthesis objective and the reported controller norm, so the two
    agree to rounding.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    axes = []
    cell = 1.0
    for lo, hi in problem.bounding_box:
        width = (hi - lo) / resolution
        axes.append(lo + (np.arange(resolution) + 0.5) * width)
        cell *= width
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    mask = problem.h.evaluate(pts) > 0
    pts = pts[mask]
    if len(pts) == 0:
        raise ValueError("degenerate region: no grid point with h > 0")
    return pts, cell


def moment_objective(
    tmpl: ControllerTemplate,
    k: Sequence[Polynomial],
    problem: ReachAvoidProblem,
    resolution: int = 201,
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Quadrature data (M, m, const) with ||u_c - k||^2 = c^T M c - 2 m.c + const.

    M is block diagonal across output channels; each diagonal block holds the
    basis moments  integral of b_i b_j over {h > 0}.
    """
    pts, cell = quadrature_grid(problem, resolution)
    basis = tmpl.basis
    nb = len(basis)
    B = np.stack(
        [Polynomial.monomial(tmpl.n_vars, mono).evaluate(pts) for mono in basis],
        axis=-1,
    )  # (npts, nb)
    base_M = (B.T @ B) * cell
    total = tmpl.m * nb
    M = np.zeros((total, total))
    mvec = np.zeros(total)
    const = 0.0
    for j in range(tmpl.m):
        sl = slice(j * nb, (j + 1) * nb)
        M[sl, sl] = base_M
        kj = k[j].evaluate(pts)
        mvec[sl] = (B.T @ kj) * cell
        const += float(np.sum(kj * kj)) * cell
    return M, mvec, const


# ---------------------------------------------------------------------------
# assembly internals
# ---------------------------------------------------------------------------


def _even_up(d: int) -> int:
    return d if d % 2 == 0 else d + 1


@dataclass
class GramGroup:
    label: str
    basis: List[Monomial]
    var_slice: slice  # positions in the global variable vector

    @property
    def size(self) -> int:
        return len(self.basis)

    def entry_positions(self) -> List[Tuple[int, int, int]]:
        """(global var position, row, col) for the upper-triangle layout."""
        out = []
        pos = self.var_slice.start
        k = self.size
        for i in range(k):
            for j in range(i, k):
                out.append((pos, i, j))
                pos += 1
        return out


@dataclass
class AssembledSdp:
    """Assembled SDP plus the affine map back to named decision variables."""

    sdp: SdpProblem
    var_names: List[str]
    v0: np.ndarray
    nullspace: np.ndarray  # (n_total_vars, n_free)
    gram_groups: List[GramGroup]
    block_labels: List[str]

    def decode(self, y: np.ndarray) -> "DecodedSolution":
        v = self.v0 + self.nullspace @ np.asarray(y, dtype=float)
        values = {name: float(v[i]) for i, name in enumerate(self.var_names)}
        grams: Dict[str, np.ndarray] = {}
        for grp in self.gram_groups:
            k = grp.size
            Q = np.zeros((k, k))
            for pos, i, j in grp.entry_positions():
                Q[i, j] = v[pos]
                Q[j, i] = v[pos]
            grams[grp.label] = Q
        return DecodedSolution(values=values, grams=grams)


@dataclass
class DecodedSolution:
    values: Dict[str, float]
    grams: Dict[str, np.ndarray]


def _constraint_degrees(spec: SosConstraintSpec, cap: int) -> Tuple[int, List[int]]:
    mult_deg = _even_up(max(0, spec.mult_degree))
    total = spec.expr.degree
    for g in spec.region.generators:
        total = max(total, mult_deg + g.degree)
    total = _even_up(total)
    if total > 2 * cap:
        raise DegreeOverflowError(
            f"constraint {spec.label!r} needs matching degree {total}, "
            f"beyond the Gram basis cap {cap}"
        )
    return total, [mult_deg for _ in spec.region.generators]


def _assemble(prog: SosProgram, gram_degree_cap: int) -> AssembledSdp:
    n_scalar = len(prog.var_names)
    names = list(prog.var_names)
    gram_groups: List[GramGroup] = []

    # allocate Gram-entry variables after the scalar decisions
    cursor = n_scalar
    per_constraint: List[Tuple[GramGroup, List[GramGroup], int]] = []
    for ci, spec in enumerate(prog.sos_constraints):
        total_deg, mult_degs = _constraint_degrees(spec, gram_degree_cap)
        sigma_basis = monomial_basis(prog.n_state_vars, total_deg // 2)
        nsig = len(sigma_basis) * (len(sigma_basis) + 1) // 2
        sigma_grp = GramGroup(
            f"{spec.label}/sos", sigma_basis, slice(cursor, cursor + nsig)
        )
        cursor += nsig
        mult_grps = []
        for gi, (gen, mdeg) in enumerate(zip(spec.region.generators, mult_degs)):
            mb = monomial_basis(prog.n_state_vars, mdeg // 2)
            nm = len(mb) * (len(mb) + 1) // 2
            grp = GramGroup(f"{spec.label}/mult{gi}", mb, slice(cursor, cursor + nm))
            cursor += nm
            mult_grps.append(grp)
        gram_groups.append(sigma_grp)
        gram_groups.extend(mult_grps)
        per_constraint.append((sigma_grp, mult_grps, total_deg))
        names.extend(f"{sigma_grp.label}[{i}]" for i in range(nsig))
        for grp in mult_grps:
            names.extend(
                f"{grp.label}[{i}]" for i in range(grp.var_slice.stop - grp.var_slice.start)
            )
    n_total = cursor

    # coefficient-matching equalities E v = d, one row per monomial
    rows: List[np.ndarray] = []
    rhs: List[float] = []
    for spec, (sigma_grp, mult_grps, total_deg) in zip(
        prog.sos_constraints, per_constraint
    ):
        row_of: Dict[Monomial, int] = {}
        all_monos = monomial_basis(prog.n_state_vars, total_deg)
        base = len(rows)
        for mono in all_monos:
            row_of[mono] = len(rows)
            rows.append(np.zeros(n_total))
            rhs.append(0.0)

        def bump(mono: Monomial, col: int, coef: float):
            rows[row_of[mono]][col] += coef

        # expr: scalar-variable parts on the left, constant part on the right
        for mono, coef in spec.expr.const.terms.items():
            rhs[row_of[mono]] -= coef
        for var, poly in spec.expr.linear.items():
            for mono, coef in poly.terms.items():
                bump(mono, var, coef)

        # - sigma_0
        for pos, i, j in sigma_grp.entry_positions():
            prod = tuple(a + b for a, b in zip(sigma_grp.basis[i], sigma_grp.basis[j]))
            factor = 1.0 if i == j else 2.0
            bump(prod, pos, -factor)

        # - s_i * g_i
        for grp, gen in zip(mult_grps, spec.region.generators):
            for pos, i, j in grp.entry_positions():
                pair = tuple(a + b for a, b in zip(grp.basis[i], grp.basis[j]))
                factor = 1.0 if i == j else 2.0
                for gmono, gcoef in gen.terms.items():
                    mono = tuple(a + b for a, b in zip(pair, gmono))
                    bump(mono, pos, -factor * gcoef)

    if rows:
        E = np.vstack(rows)
        d = np.array(rhs)
        v0, residuals, rank, svals = np.linalg.lstsq(E, d, rcond=None)
        resid = float(np.linalg.norm(E @ v0 - d))
        if resid > 1e-8 * (1.0 + float(np.linalg.norm(d))):
            raise AssemblyError(
                f"coefficient-matching equalities are inconsistent (residual {resid:.3e})"
            )
        # orthonormal nullspace basis from the SVD of E
        _, s_full, Vt = np.linalg.svd(E, full_matrices=True)
        tol = max(E.shape) * np.finfo(float).eps * (s_full[0] if len(s_full) else 1.0)
        rank = int(np.sum(s_full > tol))
        N = Vt[rank:].T
    else:
        v0 = np.zeros(n_total)
        N = np.eye(n_total)

    m_free = N.shape[1]

    blocks: List[SdpBlock] = []
    block_labels: List[str] = []

    def affine_block(size: int, entries: List[Tuple[int, int, int, float]],
                     const_entries: List[Tuple[int, int, float]], label: str):
        """Block with entries affine in v: sum over (var, i, j, coef) plus consts."""
        mats = np.zeros((m_free + 1, size, size))
        for i, j, coef in const_entries:
            mats[0, i, j] -= coef
            if i != j:
                mats[0, j, i] -= coef
        for var, i, j, coef in entries:
            mats[0, i, j] -= coef * v0[var]
            if i != j:
                mats[0, j, i] -= coef * v0[var]
            row = N[var]
            mats[1:, i, j] += coef * row
            if i != j:
                mats[1:, j, i] += coef * row
        blocks.append(SdpBlock(size=size, mats=mats))
        block_labels.append(label)

    # Gram PSD blocks
    for grp in gram_groups:
        entries = [(pos, i, j, 1.0) for pos, i, j in grp.entry_positions()]
        affine_block(grp.size, entries, [], grp.label)

    # scalar inequality blocks (1x1)
    for label, lin in prog.linear_ineqs:
        entries = [(var, 0, 0, coef) for var, coef in lin.coeffs]
        affine_block(1, entries, [(0, 0, lin.const)], label)

    # quadratic objective epigraph block via Schur complement
    if prog.quad_objective is not None:
        qo = prog.quad_objective
        r = len(qo.coeff_vars)
        Mq = qo.M + PSD_JITTER * np.eye(r)
        try:
            L = np.linalg.cholesky(Mq)
        except np.linalg.LinAlgError:
            Mq = qo.M + 1e6 * PSD_JITTER * np.eye(r)
            try:
                L = np.linalg.cholesky(Mq)
            except np.linalg.LinAlgError as exc:
                raise AssemblyError("moment matrix Cholesky failed") from exc
        # ||L c - ell||^2 = c^T M c - 2 m.c + ell.ell with L^T ell = m
        ell = np.linalg.solve(L.T, qo.m)
        corner_const = qo.const - float(ell @ ell)
        entries = [(qo.t_var, 0, 0, 1.0)]
        const_entries = [(0, 0, -corner_const)]
        for i in range(r):
            const_entries.append((1 + i, 1 + i, 1.0))
            const_entries.append((1 + i, 0, -ell[i]))
            for col, var in enumerate(qo.coeff_vars):
                if L[i, col] != 0.0:
                    entries.append((var, 1 + i, 0, L[i, col]))
        affine_block(1 + r, entries, const_entries, "objective/epigraph")

    # objective vector in the reduced coordinates
    obj_v = np.zeros(n_total)
    for var, weight in prog.linear_objective.items():
        obj_v[var] += weight
    c_red = N.T @ obj_v
    offset = float(obj_v @ v0)

    sdp = SdpProblem(c=c_red, blocks=blocks, obj_offset=offset)
    return AssembledSdp(
        sdp=sdp,
        var_names=names,
        v0=v0,
        nullspace=N,
        gram_groups=gram_groups,
        block_labels=block_labels,
    )


# spec-facing convenience wrappers ------------------------------------------


def encode_nonneg_on_region(
    prog: SosProgram,
    label: str,
    expr: PolyExpr,
    region: SemialgebraicRegion,
    mult_degree: int = 2,
) -> None:
    """Append the S-procedure lowering of "expr >= 0 on region" to ``prog``."""
    prog.add_sos(label, expr, region, mult_degree)


def assemble_sdp(prog: SosProgram, gram_degree_cap: int = DEFAULT_GRAM_DEGREE_CAP) -> SdpProblem:
    """Assemble to the standard inequality form (see :class:`AssembledSdp`)."""
    return prog.assemble(gram_degree_cap).sdp
