"""Dense block-diagonal SDP solver and SDPA sparse interchange format.

Problems are stated in inequality form over a free variable vector y:

    minimize    c . y
    subject to  sum_i y_i A_i^b  -  A_0^b  is PSD,   for every block b.

``solve`` runs an infeasible-start primal-dual path-following method with
Nesterov-Todd scaling and a Mehrotra-style adaptive centering parameter.  It
is meant for desk-scale problems (total block dimension up to ~1000) and is
fully deterministic: fixed initialization, no randomized pivoting.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg as sla

SYM_TOL = 1e-12


class SdpDataError(ValueError):
    pass


@dataclass
class SdpBlock:
    """One PSD block: mats[0] is A_0, mats[1 + i] multiplies y_i."""

    size: int
    mats: np.ndarray  # shape (m + 1, size, size)

    def __post_init__(self):
        self.mats = np.asarray(self.mats, dtype=float)
        if self.mats.ndim != 3 or self.mats.shape[1:] != (self.size, self.size):
            raise SdpDataError(
                f"block matrices must have shape (m+1, {self.size}, {self.size})"
            )
        skew = np.abs(self.mats - np.transpose(self.mats, (0, 2, 1))).max(initial=0.0)
        if skew > SYM_TOL * max(1.0, np.abs(self.mats).max(initial=0.0)):
            raise SdpDataError(f"block matrices not symmetric (skew {skew:.3e})")
        # enforce exact symmetry so downstream factorizations are clean
        self.mats = 0.5 * (self.mats + np.transpose(self.mats, (0, 2, 1)))


@dataclass
class SdpProblem:
    c: np.ndarray
    blocks: List[SdpBlock]
    obj_offset: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        for blk in self.blocks:
            if blk.mats.shape[0] != len(self.c) + 1:
                raise SdpDataError(
                    f"block carries {blk.mats.shape[0] - 1} variable matrices, "
                    f"objective has {len(self.c)}"
                )

    @property
    def n_vars(self) -> int:
        return len(self.c)

    @property
    def total_dim(self) -> int:
        return sum(b.size for b in self.blocks)


@dataclass
class SdpSolution:
    y: np.ndarray
    status: str  # optimal | infeasible | unbounded | max_iter | numerical_failure
    primal_objective: float
    dual_objective: float
    duality_gap: float
    max_constraint_violation: float
    iterations: int
    trace: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


@dataclass
class SolveOptions:
    gap_tol: float = 1e-7
    feas_tol: float = 1e-7
    max_iter: int = 200
    trace: bool = False
    step_frac: float = 0.98


# ---------------------------------------------------------------------------
# interior-point solver
# ---------------------------------------------------------------------------


def _chol_psd(mat: np.ndarray) -> Optional[np.ndarray]:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return None


def _chol_jittered(mat: np.ndarray) -> np.ndarray:
    """Cholesky with escalating diagonal jitter; raises only if hopeless."""
    L = _chol_psd(mat)
    if L is not None:
        return L
    base = max(abs(float(np.trace(mat))), 1.0)
    jitter = 1e-14 * base
    k = mat.shape[0]
    while jitter <= 1e-6 * base:
        L = _chol_psd(mat + jitter * np.eye(k))
        if L is not None:
            return L
        jitter *= 100.0
    raise np.linalg.LinAlgError("matrix is not positive definite")


def _max_step(S: np.ndarray, dS: np.ndarray) -> float:
    """Largest alpha with S + alpha dS still PSD (S assumed PD)."""
    if S.shape[0] == 1:
        s, d = S[0, 0], dS[0, 0]
        return math.inf if d >= 0 else s / (-d)
    L = _chol_psd(S)
    if L is None:
        L = _chol_psd(S + 1e-14 * np.trace(S) * np.eye(S.shape[0]))
        if L is None:
            return 0.0
    M = sla.solve_triangular(L, dS, lower=True)
    M = sla.solve_triangular(L, M.T, lower=True)
    lam_min = float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())
    if lam_min >= 0.0:
        return math.inf
    return -1.0 / lam_min


def _nt_scaling(S: np.ndarray, Z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Return (G, Zinv) where G = W^{-1} for the NT scaling W (W Z W = S)."""
    k = S.shape[0]
    if k == 1:
        w = math.sqrt(S[0, 0] / Z[0, 0])
        return np.array([[1.0 / w]]), np.array([[1.0 / Z[0, 0]]])
    Ls = _chol_jittered(S)
    Lz = _chol_jittered(Z)
    U, lam, Vt = np.linalg.svd(Lz.T @ Ls)
    # R = Ls V diag(lam^{-1/2}) satisfies R R^T = W; invert triangular factors
    Ls_inv = sla.solve_triangular(Ls, np.eye(k), lower=True)
    Rinv = (np.sqrt(lam)[:, None] * Vt) @ Ls_inv
    G = Rinv.T @ Rinv
    Lz_inv = sla.solve_triangular(Lz, np.eye(k), lower=True)
    Zinv = Lz_inv.T @ Lz_inv
    return 0.5 * (G + G.T), 0.5 * (Zinv + Zinv.T)


def solve(problem: SdpProblem, opts: SolveOptions | None = None) -> SdpSolution:
    """Solve the block SDP; statuses other than ``optimal`` are best-effort."""
    opts = opts or SolveOptions()
    m = problem.n_vars
    c = problem.c
    blocks = problem.blocks
    if not blocks:
        raise SdpDataError("problem has no blocks")

    A0 = [blk.mats[0] for blk in blocks]
    A = [blk.mats[1:] for blk in blocks]  # (m, k, k) per block
    Aflat = [a.reshape(m, blk.size * blk.size) for a, blk in zip(A, blocks)]
    sizes = [blk.size for blk in blocks]
    K = sum(sizes)

    def apply_A(y: np.ndarray, b: int) -> np.ndarray:
        return np.tensordot(y, A[b], axes=(0, 0))

    def feasibility(y: np.ndarray) -> float:
        worst = 0.0
        for b in range(len(blocks)):
            Sb = apply_A(y, b) - A0[b]
            lam = float(np.linalg.eigvalsh(0.5 * (Sb + Sb.T)).min())
            worst = min(worst, lam)
        return -worst  # most negative eigenvalue, as a violation magnitude

    if m == 0:
        ok = all(
            float(np.linalg.eigvalsh(-A0[b]).min()) >= -opts.feas_tol
            for b in range(len(blocks))
        )
        y0 = np.zeros(0)
        return SdpSolution(
            y=y0,
            status="optimal" if ok else "infeasible",
            primal_objective=0.0,
            dual_objective=0.0,
            duality_gap=0.0,
            max_constraint_violation=feasibility(y0) if not ok else 0.0,
            iterations=0,
        )

    scale = max(1.0, max(float(np.abs(blk.mats).max(initial=0.0)) for blk in blocks))
    tau = 1.0 + scale
    y = np.zeros(m)
    S = [tau * np.eye(k) for k in sizes]
    Z = [tau * np.eye(k) for k in sizes]

    c_norm = 1.0 + float(np.linalg.norm(c))
    a0_norm = 1.0 + math.sqrt(sum(float(np.sum(a0 * a0)) for a0 in A0))

    best: Optional[SdpSolution] = None
    best_score = math.inf
    trace: list = []
    pres_history: list[float] = []
    znorm_history: list[float] = []
    status = "max_iter"
    tiny_steps = 0
    it = 0

    for it in range(1, opts.max_iter + 1):
        Rp = [apply_A(y, b) - A0[b] - S[b] for b in range(len(blocks))]
        rd = c - np.sum(
            [Aflat[b] @ Z[b].ravel() for b in range(len(blocks))], axis=0
        )
        gap = sum(float(np.sum(S[b] * Z[b])) for b in range(len(blocks)))
        pobj = float(c @ y)
        dobj = pobj - gap  # dual value corrected for current infeasibility
        relgap = gap / (1.0 + abs(pobj) + abs(dobj))
        pres = math.sqrt(sum(float(np.sum(R * R)) for R in Rp)) / a0_norm
        dres = float(np.linalg.norm(rd)) / c_norm

        if opts.trace:
            trace.append(
                {
                    "iter": it,
                    "primal_objective": pobj,
                    "dual_objective": dobj,
                    "relgap": relgap,
                    "primal_residual": pres,
                    "dual_residual": dres,
                }
            )

        score = max(relgap, pres, dres)
        if score < best_score:
            best_score = score
            best = SdpSolution(
                y=y.copy(),
                status="max_iter",
                primal_objective=pobj,
                dual_objective=dobj,
                duality_gap=relgap,
                max_constraint_violation=pres,
                iterations=it,
                trace=trace,
            )

        if relgap <= opts.gap_tol and pres <= opts.feas_tol and dres <= opts.feas_tol:
            return SdpSolution(
                y=y,
                status="optimal",
                primal_objective=pobj,
                dual_objective=dobj,
                duality_gap=relgap,
                max_constraint_violation=feasibility(y),
                iterations=it,
                trace=trace,
            )

        # primal infeasibility certificate: Z PSD with A*(Z) ~ 0, <A0, Z> > 0
        znorm = math.sqrt(sum(float(np.sum(zb * zb)) for zb in Z))
        AstarZ = c - rd
        inner_a0 = sum(float(np.sum(A0[b] * Z[b])) for b in range(len(blocks)))
        if (
            znorm > 1e4 * tau
            and np.linalg.norm(AstarZ) <= 1e-7 * znorm
            and inner_a0 > 1e-7 * znorm
        ):
            status = "infeasible"
            break
        # stalled primal residual with diverging duals
        pres_history.append(pres)
        znorm_history.append(znorm)
        if len(pres_history) > 30:
            window = pres_history[-30:]
            if (
                min(window) > 1e-4
                and window[-1] > 0.9 * window[0]
                and znorm_history[-1] > 10.0 * znorm_history[-30]
            ):
                status = "infeasible"
                break
        if pobj < -1e14 * scale and pres <= 1e-6:
            status = "unbounded"
            break

        # Nesterov-Todd scaling and Schur complement
        try:
            G = []
            Zinv = []
            for b in range(len(blocks)):
                Gb, Zib = _nt_scaling(S[b], Z[b])
                G.append(Gb)
                Zinv.append(Zib)
        except np.linalg.LinAlgError:
            status = "numerical_failure"
            break

        M = np.zeros((m, m))
        T = []
        for b in range(len(blocks)):
            Tb = np.matmul(np.matmul(G[b], A[b]), G[b])  # (m, k, k)
            T.append(Tb)
            M += Aflat[b] @ Tb.reshape(m, -1).T
        M = 0.5 * (M + M.T)

        ridge = 0.0
        Mchol = _chol_psd(M)
        while Mchol is None and ridge < 1e-4 * (1.0 + np.trace(M)):
            ridge = max(1e-12 * (1.0 + np.trace(M)), ridge * 10.0)
            Mchol = _chol_psd(M + ridge * np.eye(m))
        if Mchol is None:
            status = "numerical_failure"
            break

        def newton(Rc: list[np.ndarray]):
            rhs = -rd.copy()
            for b in range(len(blocks)):
                RtG = G[b] @ (Rc[b] - Rp[b]) @ G[b]
                rhs += Aflat[b] @ RtG.ravel()
            dy = sla.cho_solve((Mchol, True), rhs)
            # iterative refinement; the Schur system turns ill-conditioned as
            # the barrier parameter collapses
            for _ in range(2):
                resid = rhs - M @ dy
                if np.linalg.norm(resid) <= 1e-14 * (1.0 + np.linalg.norm(rhs)):
                    break
                dy = dy + sla.cho_solve((Mchol, True), resid)
            dS = []
            dZ = []
            for b in range(len(blocks)):
                Ady = np.tensordot(dy, A[b], axes=(0, 0))
                dSb = Ady + Rp[b]
                dZb = G[b] @ (Rc[b] - Rp[b] - Ady) @ G[b]
                dS.append(0.5 * (dSb + dSb.T))
                dZ.append(0.5 * (dZb + dZb.T))
            return dy, dS, dZ

        mu = gap / K
        # predictor (affine scaling)
        Rc_aff = [-S[b] for b in range(len(blocks))]
        dy_a, dS_a, dZ_a = newton(Rc_aff)
        ap = min(
            (1.0, *[_max_step(S[b], dS_a[b]) for b in range(len(blocks))])
        )
        ad = min(
            (1.0, *[_max_step(Z[b], dZ_a[b]) for b in range(len(blocks))])
        )
        gap_aff = sum(
            float(np.sum((S[b] + ap * dS_a[b]) * (Z[b] + ad * dZ_a[b])))
            for b in range(len(blocks))
        )
        sigma = min(1.0, max(1e-8, (max(gap_aff, 0.0) / gap) ** 3))
        # keep the barrier from outrunning feasibility
        if dres > 10.0 * relgap or pres > 10.0 * relgap:
            sigma = max(sigma, 0.5)

        # corrector with centering target sigma * mu; re-center if the step
        # collapses near the boundary
        for attempt in range(3):
            Rc = [sigma * mu * Zinv[b] - S[b] for b in range(len(blocks))]
            dy, dS, dZ = newton(Rc)
            ap = opts.step_frac * min(
                (1.0 / opts.step_frac,
                 *[_max_step(S[b], dS[b]) for b in range(len(blocks))])
            )
            ad = opts.step_frac * min(
                (1.0 / opts.step_frac,
                 *[_max_step(Z[b], dZ[b]) for b in range(len(blocks))])
            )
            ap = min(ap, 1.0)
            ad = min(ad, 1.0)
            if min(ap, ad) >= 0.05 or sigma >= 0.99:
                break
            sigma = min(1.0, max(10.0 * sigma, 0.5))

        if ap <= 1e-10 and ad <= 1e-10:
            tiny_steps += 1
            if tiny_steps >= 5:
                status = "numerical_failure"
                break
        else:
            tiny_steps = 0

        y = y + ap * dy
        for b in range(len(blocks)):
            S[b] = S[b] + ap * dS[b]
            Z[b] = Z[b] + ad * dZ[b]

    result = best if best is not None else SdpSolution(
        y=y,
        status=status,
        primal_objective=float(c @ y),
        dual_objective=float("nan"),
        duality_gap=float("inf"),
        max_constraint_violation=feasibility(y),
        iterations=it,
        trace=trace,
    )
    result.status = status
    result.iterations = it
    result.trace = trace
    return result


# ---------------------------------------------------------------------------
# SDPA sparse interchange format
# ---------------------------------------------------------------------------


def export_sdpa(problem: SdpProblem, path: str | Path) -> None:
    """Write the problem in SDPA sparse format (.dat-s).

    Entries carry 17 significant digits; only the upper triangle is written.
    """
    lines = [f"{problem.n_vars}", f"{len(problem.blocks)}"]
    lines.append(" ".join(str(b.size) for b in problem.blocks))
    lines.append(" ".join(f"{v:.17g}" for v in problem.c))
    for matno in range(problem.n_vars + 1):
        for blkno, blk in enumerate(problem.blocks, start=1):
            mat = blk.mats[matno]
            for i in range(blk.size):
                for j in range(i, blk.size):
                    v = mat[i, j]
                    if v != 0.0:
                        lines.append(f"{matno} {blkno} {i + 1} {j + 1} {v:.17g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def import_sdpa(path: str | Path) -> SdpProblem:
    """Read SDPA sparse format; negative block sizes denote diagonal blocks."""
    raw_lines = Path(path).read_text(encoding="utf-8").splitlines()
    body: list[tuple[int, str]] = []
    for lineno, line in enumerate(raw_lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("*") or stripped.startswith('"'):
            continue
        body.append((lineno, stripped))
    if len(body) < 4:
        raise SdpDataError("SDPA file too short")

    def fail(lineno: int, msg: str):
        raise SdpDataError(f"line {lineno}: {msg}")

    def ints(text: str, lineno: int) -> list[int]:
        toks = re.split(r"[\s,(){}]+", text)
        out = []
        for tok in toks:
            if not tok:
                continue
            try:
                out.append(int(tok))
            except ValueError:
                fail(lineno, f"expected integer, found {tok!r}")
        return out

    lineno, text = body[0]
    m_vals = ints(text, lineno)
    if len(m_vals) != 1 or m_vals[0] < 0:
        fail(lineno, "expected the number of variables")
    m = m_vals[0]

    lineno, text = body[1]
    nb_vals = ints(text, lineno)
    if len(nb_vals) != 1 or nb_vals[0] < 1:
        fail(lineno, "expected the number of blocks")
    nblocks = nb_vals[0]

    lineno, text = body[2]
    raw_sizes = ints(text, lineno)
    if len(raw_sizes) != nblocks:
        fail(lineno, f"expected {nblocks} block sizes, found {len(raw_sizes)}")
    diagonal = [s < 0 for s in raw_sizes]
    sizes = [abs(s) for s in raw_sizes]
    if any(s == 0 for s in sizes):
        fail(lineno, "zero block size")

    lineno, text = body[3]
    toks = [t for t in re.split(r"[\s,(){}]+", text) if t]
    if len(toks) != m:
        fail(lineno, f"expected {m} objective entries, found {len(toks)}")
    try:
        c = np.array([float(t) for t in toks])
    except ValueError:
        fail(lineno, "non-numeric objective entry")

    mats = [np.zeros((m + 1, s, s)) for s in sizes]
    for lineno, text in body[4:]:
        toks = [t for t in re.split(r"[\s,(){}]+", text) if t]
        if len(toks) != 5:
            fail(lineno, f"expected 'matno blkno i j value', found {text!r}")
        try:
            matno, blkno, i, j = (int(t) for t in toks[:4])
            value = float(toks[4])
        except ValueError:
            fail(lineno, f"malformed entry {text!r}")
        if not 0 <= matno <= m:
            fail(lineno, f"matrix index {matno} out of range")
        if not 1 <= blkno <= nblocks:
            fail(lineno, f"block index {blkno} out of range")
        size = sizes[blkno - 1]
        if not (1 <= i <= size and 1 <= j <= size):
            fail(lineno, f"entry ({i},{j}) outside block of size {size}")
        if i > j:
            fail(lineno, f"lower-triangle entry ({i},{j}); upper triangle required")
        if diagonal[blkno - 1] and i != j:
            fail(lineno, f"off-diagonal entry ({i},{j}) in a diagonal block")
        mats[blkno - 1][matno, i - 1, j - 1] = value
        mats[blkno - 1][matno, j - 1, i - 1] = value

    blocks = [SdpBlock(size=s, mats=mm) for s, mm in zip(sizes, mats)]
    return SdpProblem(c=c, blocks=blocks)


__all__ = [
    "SdpBlock",
    "SdpProblem",
    "SdpSolution",
    "SolveOptions",
    "SdpDataError",
    "solve",
    "export_sdpa",
    "import_sdpa",
]
