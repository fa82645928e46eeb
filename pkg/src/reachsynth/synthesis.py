"""Reach-avoid controller synthesis programs and their iterative drivers.

Five methods are provided.  For ODE systems:

* ``exponential``   -- one convex program; the safe-set function must grow at
  rate lambda along closed-loop trajectories outside the target.
* ``asymptotic``    -- growth is delegated to an auxiliary certificate w with
  L_w >= h; bilinear in (u, w), solved by alternation.
* ``lax``           -- the decrease condition on h is confined to a boundary
  band {0 <= h <= eps0} and w only needs L_w > 0; weakest of the three.

For SDE systems, ``stoch_exponential`` and ``stoch_asymptotic`` replace the
Lie derivative with the diffusion generator; the certified controller then
bounds the reach-avoid probability from below by h(x0) (or by a tightened
variant when the relaxation slack delta is positive).

Every program minimizes the squared integral norm ||u - k||^2 over the safe
set (epigraph variable t) plus ``c_penalty * delta``; reported norms are the
square roots, so they agree with ``validate.controller_norm``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .liegen import (
    AffineInCoefficients,
    generator_closed_loop,
    generator_of,
)
from .polycore import Polynomial, monomial_basis
from .problem import ControllerTemplate, ReachAvoidProblem
from .sdpcore import SdpSolution, SolveOptions, solve
from .sosenc import (
    AssembledSdp,
    LinExpr,
    PolyExpr,
    SemialgebraicRegion,
    SosProgram,
    moment_objective,
    quadrature_grid,
    region_boundary_band,
    region_outside_target,
    region_safe,
)

METHODS = (
    "exponential",
    "asymptotic",
    "lax",
    "stoch_exponential",
    "stoch_asymptotic",
)

DELTA_ZERO_TOL = 1e-9

# compactness bounds; generous enough to never bind at meaningful optima
RATE_BOUND = 1e6
BETA_BOUND = 1e6
DELTA_BOUND = 1e9
T_BOUND = 1e12


@dataclass
class SynthesisOptions:
    method: str = "exponential"
    xi0: float = 1e-3
    eps_prime: float = 1e-3
    eps_star: float = 1e-3
    eps0: float = 1e-3
    c_penalty: float = 1e6
    mult_degree: int = 2
    w_degree: int = 4
    max_alternations: int = 20
    quad_resolution: int = 201
    eps_strict: float = 1e-6
    gram_degree_cap: int = 6
    coeff_bound: float = 1e6
    w_coeff_bound: float = 1e4
    sdp_gap_tol: float = 1e-7
    sdp_feas_tol: float = 1e-7
    sdp_max_iter: int = 200

    def __post_init__(self):
        if self.xi0 <= 0:
            raise ValueError("xi0 must be positive")
        if self.eps0 <= 0:
            raise ValueError("eps0 must be positive")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")

    def solver_options(self) -> SolveOptions:
        return SolveOptions(
            gap_tol=self.sdp_gap_tol,
            feas_tol=self.sdp_feas_tol,
            max_iter=self.sdp_max_iter,
        )


@dataclass
class SynthesisResult:
    status: str  # full_reach_avoid | tightened_reach_avoid | safe_only | failed
    method: str
    controller_coeffs: Optional[List[float]]
    controller: Optional[List[Polynomial]]
    rate: Optional[float]  # lambda (ODE) or alpha (SDE), when applicable
    beta: Optional[float]
    delta: Optional[float]
    w: Optional[Polynomial]
    norm: Optional[float]
    classification_h_prime: Optional[Polynomial]
    iterations: int
    trace: List[Dict[str, float]] = field(default_factory=list)
    diagnostics: List[str] = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return self.status in ("full_reach_avoid", "tightened_reach_avoid")


class SynthesisError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# shared workspace
# ---------------------------------------------------------------------------


class _Workspace:
    """Per-problem cached data shared by all programs of one synthesis run."""

    def __init__(self, problem: ReachAvoidProblem, opts: SynthesisOptions):
        self.problem = problem
        self.opts = opts
        self.tmpl: ControllerTemplate = problem.template
        self.L_h: AffineInCoefficients = generator_of(
            problem.h, problem.system, self.tmpl
        )
        self.region_out = region_outside_target(problem)
        self.region_safe = region_safe(problem)
        self.region_band = region_boundary_band(problem, opts.eps0)
        self.M, self.mvec, self.const = moment_objective(
            self.tmpl, problem.k, problem, opts.quad_resolution
        )
        self.w_basis = monomial_basis(problem.n, opts.w_degree)
        self._grid_cache: Optional[np.ndarray] = None

    def norm_of(self, coeffs: Sequence[float]) -> float:
        c = np.asarray(coeffs, dtype=float)
        val = float(c @ self.M @ c - 2.0 * self.mvec @ c + self.const)
        return math.sqrt(max(val, 0.0))

    def classification_grid(self) -> np.ndarray:
        if self._grid_cache is None:
            pts, _ = quadrature_grid(self.problem, self.opts.quad_resolution)
            self._grid_cache = pts
        return self._grid_cache

    def sampled_intersection_nonempty(self, h_prime: Polynomial) -> bool:
        pts = self.classification_grid()
        mask = (h_prime.evaluate(pts) > 0) & (self.problem.h_r.evaluate(pts) < 0)
        return bool(np.any(mask))


def _affine_to_expr(aff: AffineInCoefficients, u_vars: Sequence[int]) -> PolyExpr:
    return PolyExpr(
        aff.n_vars,
        aff.constant_part,
        {u_vars[i]: p for i, p in aff.linear_part.items()},
    )


def _base_program(ws: _Workspace) -> Tuple[SosProgram, List[int]]:
    """Fresh program with controller unknowns and input-box constraints."""
    p = ws.problem
    prog = SosProgram(p.n)
    u_vars = prog.add_scalar_vector(
        "u", ws.tmpl.n_coeffs, lo=-ws.opts.coeff_bound, hi=ws.opts.coeff_bound
    )
    basis = ws.tmpl.basis
    nb = len(basis)
    one = Polynomial.constant(p.n, 1.0)
    for j, box in enumerate(p.input_box):
        if box is None:
            continue
        lo, hi = box
        uj_linear = {
            u_vars[ws.tmpl.coeff_index(j, b)]: Polynomial.monomial(p.n, basis[b])
            for b in range(nb)
        }
        hi_expr = PolyExpr(p.n, one.scale(hi), {v: -q for v, q in uj_linear.items()})
        lo_expr = PolyExpr(p.n, one.scale(-lo), dict(uj_linear))
        prog.add_sos(f"box/u{j}/upper", hi_expr, ws.region_safe, ws.opts.mult_degree)
        prog.add_sos(f"box/u{j}/lower", lo_expr, ws.region_safe, ws.opts.mult_degree)
    return prog, u_vars


def _add_norm_objective(ws: _Workspace, prog: SosProgram, u_vars: Sequence[int]) -> int:
    t = prog.add_scalar("t", hi=T_BOUND)
    prog.set_quadratic_objective(t, u_vars, ws.M, ws.mvec, ws.const)
    prog.add_objective_term(t, 1.0)
    return t


def _solve_program(ws: _Workspace, prog: SosProgram) -> Tuple[SdpSolution, AssembledSdp]:
    assembled = prog.assemble(ws.opts.gram_degree_cap)
    sol = solve(assembled.sdp, ws.opts.solver_options())
    return sol, assembled


def _usable(sol: SdpSolution) -> bool:
    if sol.status == "optimal":
        return True
    return (
        sol.status == "max_iter"
        and sol.duality_gap <= 1e-5
        and sol.max_constraint_violation <= 1e-5
    )


def _failed(method: str, diagnostics: List[str]) -> SynthesisResult:
    return SynthesisResult(
        status="failed",
        method=method,
        controller_coeffs=None,
        controller=None,
        rate=None,
        beta=None,
        delta=None,
        w=None,
        norm=None,
        classification_h_prime=None,
        iterations=0,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# single-shot programs (exponential conditions)
# ---------------------------------------------------------------------------


def synth_exponential(
    problem: ReachAvoidProblem, opts: SynthesisOptions | None = None
) -> SynthesisResult:
    """Minimal-norm controller with L_h >= lambda h outside the target."""
    opts = opts or SynthesisOptions(method="exponential")
    if problem.is_stochastic:
        raise ValueError("exponential method expects a deterministic problem")
    return _synth_rate_condition(problem, opts, stochastic=False)


def synth_stoch_exponential(
    problem: ReachAvoidProblem, opts: SynthesisOptions | None = None
) -> SynthesisResult:
    """Stochastic variant: generator of h >= alpha h, with 0 <= delta <= alpha - xi0."""
    opts = opts or SynthesisOptions(method="stoch_exponential")
    if not problem.is_stochastic:
        raise ValueError("stoch_exponential expects a stochastic problem (sigma present)")
    _require_h_at_most_one(problem)
    return _synth_rate_condition(problem, opts, stochastic=True)


def _require_h_at_most_one(problem: ReachAvoidProblem) -> None:
    pts, _ = quadrature_grid(problem, 201)
    mask = problem.h_r.evaluate(pts) <= 0
    if np.any(mask):
        hmax = float(np.max(problem.h.evaluate(pts)[mask]))
        if hmax > 1.0 + 1e-9:
            raise ValueError(
                f"stochastic pathway requires h <= 1 on the target set "
                f"(sampled max {hmax:.6g}); rescale h"
            )


def _synth_rate_condition(
    problem: ReachAvoidProblem, opts: SynthesisOptions, stochastic: bool
) -> SynthesisResult:
    method = "stoch_exponential" if stochastic else "exponential"
    ws = _Workspace(problem, opts)
    prog, u_vars = _base_program(ws)
    rate = prog.add_scalar("rate", lo=opts.xi0, hi=RATE_BOUND)
    delta = prog.add_scalar("delta", lo=0.0, hi=DELTA_BOUND)
    if stochastic:
        # delta < alpha, implemented as delta <= alpha - xi0
        prog.add_linear_ineq(
            "delta<=rate-xi0", LinExpr(((rate, 1.0), (delta, -1.0)), -opts.xi0)
        )

    expr = _affine_to_expr(ws.L_h, u_vars)
    expr = expr.add_linear(rate, -problem.h)
    expr = expr.add_linear(delta, Polynomial.constant(problem.n, 1.0))
    prog.add_sos("gbf/rate", expr, ws.region_out, opts.mult_degree)

    _add_norm_objective(ws, prog, u_vars)
    prog.add_objective_term(delta, opts.c_penalty)

    sol, assembled = _solve_program(ws, prog)
    diagnostics = []
    if not _usable(sol):
        diagnostics.append(f"rate program: solver status {sol.status}")
        return _failed(method, diagnostics)

    dec = assembled.decode(sol.y)
    coeffs = [dec.values[f"u[{i}]"] for i in range(ws.tmpl.n_coeffs)]
    rate_v = dec.values["rate"]
    delta_v = max(dec.values["delta"], 0.0)
    norm = ws.norm_of(coeffs)

    if stochastic:
        status, h_prime = classify_stoch_exponential(
            ws, rate_v, delta_v, problem.h
        )
    else:
        status, h_prime = classify_exponential(ws, rate_v, delta_v, problem.h)
    if status == "failed":
        diagnostics.append(
            "relaxation is positive and the tightened set misses the target"
        )

    return SynthesisResult(
        status=status,
        method=method,
        controller_coeffs=coeffs,
        controller=ws.tmpl.instantiate(coeffs),
        rate=rate_v,
        beta=None,
        delta=delta_v,
        w=None,
        norm=norm,
        classification_h_prime=h_prime,
        iterations=1,
        trace=[{"delta": delta_v, "norm": norm}],
        diagnostics=diagnostics,
    )


def classify_exponential(
    ws: _Workspace, rate: float, delta: float, h: Polynomial
) -> Tuple[str, Optional[Polynomial]]:
    """delta = 0 gives the full property; else the set {h > delta/rate}."""
    if delta <= DELTA_ZERO_TOL:
        return "full_reach_avoid", None
    h_prime = h - Polynomial.constant(h.n_vars, delta / rate)
    if ws.sampled_intersection_nonempty(h_prime):
        return "tightened_reach_avoid", h_prime
    return "failed", h_prime


def classify_stoch_exponential(
    ws: _Workspace, alpha: float, delta: float, h: Polynomial
) -> Tuple[str, Optional[Polynomial]]:
    """delta = 0 gives the full property; else h' = (alpha h - delta)/(alpha - delta)."""
    if delta <= DELTA_ZERO_TOL:
        return "full_reach_avoid", None
    denom = alpha - delta
    if denom <= 0:
        return "failed", None
    h_prime = h.scale(alpha / denom) - Polynomial.constant(h.n_vars, delta / denom)
    if ws.sampled_intersection_nonempty(h_prime):
        return "tightened_reach_avoid", h_prime
    return "failed", h_prime


# ---------------------------------------------------------------------------
# alternation building blocks
# ---------------------------------------------------------------------------


def _fit_w(
    ws: _Workspace, u_polys: Sequence[Polynomial], kind: str
) -> Tuple[Optional[Polynomial], float, SdpSolution]:
    """Best auxiliary certificate for a fixed controller: minimize the slack delta.

    kind 'asym'/'stoch_asym': L_w >= h - delta;  kind 'lax': L_w >= eps_strict - delta.
    """
    p = ws.problem
    opts = ws.opts
    prog = SosProgram(p.n)
    w_vars = prog.add_scalar_vector(
        "w", len(ws.w_basis), lo=-opts.w_coeff_bound, hi=opts.w_coeff_bound
    )
    delta_hi = 1.0 - opts.eps_strict if kind == "stoch_asym" else DELTA_BOUND
    delta = prog.add_scalar("delta", lo=0.0, hi=delta_hi)

    if kind == "lax":
        const = Polynomial.constant(p.n, -opts.eps_strict)
    else:
        const = -p.h
    expr = PolyExpr(p.n, const, {})
    for i, mono in enumerate(ws.w_basis):
        lb = generator_closed_loop(
            Polynomial.monomial(p.n, mono), p.system, u_polys
        )
        if not lb.is_zero():
            expr = expr.add_linear(w_vars[i], lb)
    expr = expr.add_linear(delta, Polynomial.constant(p.n, 1.0))
    prog.add_sos("wfit/reach", expr, ws.region_out, opts.mult_degree)
    prog.add_objective_term(delta, 1.0)

    sol, assembled = _solve_program(ws, prog)
    if not _usable(sol):
        return None, math.inf, sol
    dec = assembled.decode(sol.y)
    w_poly = Polynomial(
        p.n, {mono: dec.values[f"w[{i}]"] for i, mono in enumerate(ws.w_basis)}
    )
    return w_poly, max(dec.values["delta"], 0.0), sol


def _u_step(
    ws: _Workspace, w_poly: Polynomial, kind: str
) -> Tuple[Optional[List[float]], float, float, Optional[float], SdpSolution]:
    """Re-optimize the controller for a fixed certificate w.

    Returns (coeffs, delta, norm, beta, solution).
    """
    p = ws.problem
    opts = ws.opts
    prog, u_vars = _base_program(ws)
    delta_hi = 1.0 - opts.eps_strict if kind == "stoch_asym" else DELTA_BOUND
    delta = prog.add_scalar("delta", lo=0.0, hi=delta_hi)
    beta = None

    if kind == "lax":
        beta = prog.add_scalar("beta", lo=0.0, hi=BETA_BOUND)
        safety = _affine_to_expr(ws.L_h, u_vars).add_linear(beta, p.h)
        prog.add_sos("gbf/band", safety, ws.region_band, opts.mult_degree)
    else:
        safety = _affine_to_expr(ws.L_h, u_vars)
        prog.add_sos("gbf/safety", safety, ws.region_out, opts.mult_degree)

    L_w = generator_of(w_poly, p.system, ws.tmpl)
    reach = _affine_to_expr(L_w, u_vars)
    if kind == "lax":
        reach = reach.add_const(Polynomial.constant(p.n, -opts.eps_strict))
    else:
        reach = reach.add_const(-p.h)
    reach = reach.add_linear(delta, Polynomial.constant(p.n, 1.0))
    prog.add_sos("gbf/reach", reach, ws.region_out, opts.mult_degree)

    _add_norm_objective(ws, prog, u_vars)
    prog.add_objective_term(delta, opts.c_penalty)

    sol, assembled = _solve_program(ws, prog)
    if not _usable(sol):
        return None, math.inf, math.inf, None, sol
    dec = assembled.decode(sol.y)
    coeffs = [dec.values[f"u[{i}]"] for i in range(ws.tmpl.n_coeffs)]
    beta_v = dec.values["beta"] if beta is not None else None
    return coeffs, max(dec.values["delta"], 0.0), ws.norm_of(coeffs), beta_v, sol


def _safe_controller(
    ws: _Workspace, kind: str
) -> Tuple[Optional[List[float]], SdpSolution]:
    """Minimal-norm controller under the safety condition alone."""
    prog, u_vars = _base_program(ws)
    if kind == "lax":
        safety = _affine_to_expr(ws.L_h, u_vars)
        prog.add_sos("gbf/band", safety, ws.region_band, ws.opts.mult_degree)
    else:
        safety = _affine_to_expr(ws.L_h, u_vars)
        prog.add_sos("gbf/safety", safety, ws.region_out, ws.opts.mult_degree)
    _add_norm_objective(ws, prog, u_vars)
    sol, assembled = _solve_program(ws, prog)
    if not _usable(sol):
        return None, sol
    dec = assembled.decode(sol.y)
    return [dec.values[f"u[{i}]"] for i in range(ws.tmpl.n_coeffs)], sol


@dataclass
class _AlternationOutcome:
    coeffs: List[float]
    w: Optional[Polynomial]
    delta: float
    norm: float
    beta: Optional[float]
    iterations: int
    trace: List[Dict[str, float]]
    diagnostics: List[str]


def _alternate(ws: _Workspace, seed_coeffs: List[float], kind: str) -> _AlternationOutcome:
    """Alternate certificate fitting and controller re-optimization.

    Stopping mirrors the iterative schemes: with both slacks at zero, continue
    only while the norm improves by more than eps_prime; otherwise continue
    only while the slack improves by more than eps_star.  The final iterate is
    returned; on divergence the best iterate seen wins.
    """
    opts = ws.opts
    trace: List[Dict[str, float]] = []
    diagnostics: List[str] = []
    u_cur = list(seed_coeffs)
    xi_cur = ws.norm_of(u_cur)
    best: Optional[_AlternationOutcome] = None
    worse_rounds = 0
    prev_key: Optional[Tuple[float, float]] = None
    iterations = 0

    for it in range(1, opts.max_alternations + 1):
        iterations = it
        w_poly, delta_a, sol_w = _fit_w(ws, ws.tmpl.instantiate(u_cur), kind)
        if w_poly is None:
            diagnostics.append(
                f"iteration {it}: certificate fit failed (status {sol_w.status})"
            )
            break
        coeffs, delta_b, xi_new, beta_v, sol_u = _u_step(ws, w_poly, kind)
        if coeffs is None:
            diagnostics.append(
                f"iteration {it}: controller step failed (status {sol_u.status})"
            )
            break
        trace.append({"delta": delta_b, "norm": xi_new, "delta_fit": delta_a})

        outcome = _AlternationOutcome(
            coeffs, w_poly, delta_b, xi_new, beta_v, it, trace, diagnostics
        )
        key = (max(delta_b, DELTA_ZERO_TOL), xi_new)
        if best is None or key < (max(best.delta, DELTA_ZERO_TOL), best.norm):
            best = outcome

        worse = prev_key is not None and (
            key[0] > prev_key[0] + 1e-9
            or (key[0] <= prev_key[0] + 1e-9 and key[1] > prev_key[1] + 1e-9)
        )
        if worse:
            worse_rounds += 1
            if worse_rounds >= 2:
                diagnostics.append(
                    f"iteration {it}: alternation diverging; keeping the best iterate"
                )
                return best
        else:
            worse_rounds = 0
        prev_key = key

        if delta_a <= DELTA_ZERO_TOL and delta_b <= DELTA_ZERO_TOL:
            if xi_new - xi_cur <= -opts.eps_prime:
                u_cur, xi_cur = coeffs, xi_new
                continue
            return outcome
        if delta_b - delta_a <= -opts.eps_star:
            u_cur, xi_cur = coeffs, xi_new
            continue
        return outcome

    if best is not None:
        if iterations >= opts.max_alternations:
            diagnostics.append("alternation budget exhausted; keeping the best iterate")
        return best
    raise SynthesisError("; ".join(diagnostics) or "alternation produced no iterate")


# ---------------------------------------------------------------------------
# asymptotic and lax drivers
# ---------------------------------------------------------------------------


def synth_asymptotic(
    problem: ReachAvoidProblem,
    opts: SynthesisOptions | None = None,
    exponential_result: Optional[SynthesisResult] = None,
) -> SynthesisResult:
    """Alternating synthesis under L_h >= 0 and L_w >= h (ODE pathway)."""
    opts = opts or SynthesisOptions(method="asymptotic")
    if problem.is_stochastic:
        raise ValueError("asymptotic method expects a deterministic problem")
    return _synth_alternating(problem, opts, "asym", exponential_result)


def synth_stoch_asymptotic(
    problem: ReachAvoidProblem,
    opts: SynthesisOptions | None = None,
    exponential_result: Optional[SynthesisResult] = None,
) -> SynthesisResult:
    """Stochastic alternating synthesis; slack capped below one."""
    opts = opts or SynthesisOptions(method="stoch_asymptotic")
    if not problem.is_stochastic:
        raise ValueError("stoch_asymptotic expects a stochastic problem")
    _require_h_at_most_one(problem)
    return _synth_alternating(problem, opts, "stoch_asym", exponential_result)


def _synth_alternating(
    problem: ReachAvoidProblem,
    opts: SynthesisOptions,
    kind: str,
    exponential_result: Optional[SynthesisResult],
) -> SynthesisResult:
    method = "stoch_asymptotic" if kind == "stoch_asym" else "asymptotic"
    ws = _Workspace(problem, opts)
    diagnostics: List[str] = []

    exp_opts = replace(
        opts, method="stoch_exponential" if kind == "stoch_asym" else "exponential"
    )
    exp = exponential_result
    if exp is None:
        if kind == "stoch_asym":
            exp = synth_stoch_exponential(problem, exp_opts)
        else:
            exp = synth_exponential(problem, exp_opts)

    if exp.controller_coeffs is not None and (exp.delta or 0.0) <= DELTA_ZERO_TOL:
        seed = exp.controller_coeffs
        diagnostics.append("seeded from the rate-condition controller")
    else:
        seed, sol_safe = _safe_controller(ws, kind="asym")
        if seed is None:
            diagnostics.append(
                f"no safe controller exists at this degree (status {sol_safe.status})"
            )
            return _failed(method, diagnostics)
        diagnostics.append("seeded from the safety-only controller")

    try:
        out = _alternate(ws, seed, kind)
    except SynthesisError as exc:
        diagnostics.append(str(exc))
        # safety still holds for the seed; report it as safe-only
        return SynthesisResult(
            status="safe_only",
            method=method,
            controller_coeffs=seed,
            controller=ws.tmpl.instantiate(seed),
            rate=None,
            beta=None,
            delta=None,
            w=None,
            norm=ws.norm_of(seed),
            classification_h_prime=None,
            iterations=0,
            diagnostics=diagnostics,
        )

    diagnostics.extend(d for d in out.diagnostics if d not in diagnostics)
    if kind == "stoch_asym":
        status, h_prime = _classify_stoch_asymptotic(ws, out.delta, problem.h)
    else:
        status, h_prime = _classify_asymptotic(ws, out.delta, problem.h)

    return SynthesisResult(
        status=status,
        method=method,
        controller_coeffs=out.coeffs,
        controller=ws.tmpl.instantiate(out.coeffs),
        rate=None,
        beta=None,
        delta=out.delta,
        w=out.w,
        norm=out.norm,
        classification_h_prime=h_prime,
        iterations=out.iterations,
        trace=out.trace,
        diagnostics=diagnostics,
    )


def _classify_asymptotic(
    ws: _Workspace, delta: float, h: Polynomial
) -> Tuple[str, Optional[Polynomial]]:
    """delta = 0 full; else {h > delta}; safety holds either way."""
    if delta <= DELTA_ZERO_TOL:
        return "full_reach_avoid", None
    h_prime = h - Polynomial.constant(h.n_vars, delta)
    if ws.sampled_intersection_nonempty(h_prime):
        return "tightened_reach_avoid", h_prime
    return "safe_only", None


def _classify_stoch_asymptotic(
    ws: _Workspace, delta: float, h: Polynomial
) -> Tuple[str, Optional[Polynomial]]:
    """delta = 0 full; else h' = (h - delta)/(1 - delta)."""
    if delta <= DELTA_ZERO_TOL:
        return "full_reach_avoid", None
    if delta >= 1.0:
        return "safe_only", None
    h_prime = (h - Polynomial.constant(h.n_vars, delta)).scale(1.0 / (1.0 - delta))
    if ws.sampled_intersection_nonempty(h_prime):
        return "tightened_reach_avoid", h_prime
    return "safe_only", None


def synth_lax(
    problem: ReachAvoidProblem,
    opts: SynthesisOptions | None = None,
    asymptotic_result: Optional[SynthesisResult] = None,
) -> SynthesisResult:
    """Weakest ODE condition: decrease bounded only on a boundary band.

    A positive final slack leaves no reach guarantee at all, so the outcome is
    then reported as safe-only.
    """
    opts = opts or SynthesisOptions(method="lax")
    if problem.is_stochastic:
        raise ValueError("lax method expects a deterministic problem")
    ws = _Workspace(problem, opts)
    diagnostics: List[str] = []

    asym = asymptotic_result
    if asym is None:
        asym = synth_asymptotic(problem, replace(opts, method="asymptotic"))

    if asym.controller_coeffs is not None and asym.status != "failed":
        seed = asym.controller_coeffs
        diagnostics.append("seeded from the asymptotic controller")
    else:
        seed, sol_safe = _safe_controller(ws, kind="lax")
        if seed is None:
            diagnostics.append(
                f"no band-safe controller exists at this degree (status {sol_safe.status})"
            )
            return _failed("lax", diagnostics)
        diagnostics.append("seeded from the band-safety controller")

    try:
        out = _alternate(ws, seed, "lax")
    except SynthesisError as exc:
        diagnostics.append(str(exc))
        return SynthesisResult(
            status="safe_only",
            method="lax",
            controller_coeffs=seed,
            controller=ws.tmpl.instantiate(seed),
            rate=None,
            beta=None,
            delta=None,
            w=None,
            norm=ws.norm_of(seed),
            classification_h_prime=None,
            iterations=0,
            diagnostics=diagnostics,
        )

    diagnostics.extend(d for d in out.diagnostics if d not in diagnostics)
    status = "full_reach_avoid" if out.delta <= DELTA_ZERO_TOL else "safe_only"
    return SynthesisResult(
        status=status,
        method="lax",
        controller_coeffs=out.coeffs,
        controller=ws.tmpl.instantiate(out.coeffs),
        rate=None,
        beta=out.beta,
        delta=out.delta,
        w=out.w,
        norm=out.norm,
        classification_h_prime=None,
        iterations=out.iterations,
        trace=out.trace,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def synthesize(
    problem: ReachAvoidProblem, opts: SynthesisOptions | None = None
) -> SynthesisResult:
    opts = opts or SynthesisOptions()
    if opts.method == "exponential":
        return synth_exponential(problem, opts)
    if opts.method == "asymptotic":
        return synth_asymptotic(problem, opts)
    if opts.method == "lax":
        return synth_lax(problem, opts)
    if opts.method == "stoch_exponential":
        return synth_stoch_exponential(problem, opts)
    if opts.method == "stoch_asymptotic":
        return synth_stoch_asymptotic(problem, opts)
    raise ValueError(f"unknown method {opts.method!r}")


def build_method_sdp(problem: ReachAvoidProblem, opts: SynthesisOptions) -> AssembledSdp:
    """Assemble (without solving) the first program of the selected method.

    Used by the SDPA export path for cross-validation with external solvers.
    """
    ws = _Workspace(problem, opts)
    if opts.method in ("exponential", "stoch_exponential"):
        prog, u_vars = _base_program(ws)
        rate = prog.add_scalar("rate", lo=opts.xi0, hi=RATE_BOUND)
        delta = prog.add_scalar("delta", lo=0.0, hi=DELTA_BOUND)
        if opts.method == "stoch_exponential":
            prog.add_linear_ineq(
                "delta<=rate-xi0", LinExpr(((rate, 1.0), (delta, -1.0)), -opts.xi0)
            )
        expr = _affine_to_expr(ws.L_h, u_vars)
        expr = expr.add_linear(rate, -problem.h)
        expr = expr.add_linear(delta, Polynomial.constant(problem.n, 1.0))
        prog.add_sos("gbf/rate", expr, ws.region_out, opts.mult_degree)
        _add_norm_objective(ws, prog, u_vars)
        prog.add_objective_term(delta, opts.c_penalty)
        return prog.assemble(opts.gram_degree_cap)
    # alternation methods export their safety-seed program
    prog, u_vars = _base_program(ws)
    region = ws.region_band if opts.method == "lax" else ws.region_out
    label = "gbf/band" if opts.method == "lax" else "gbf/safety"
    prog.add_sos(label, _affine_to_expr(ws.L_h, u_vars), region, opts.mult_degree)
    _add_norm_objective(ws, prog, u_vars)
    return prog.assemble(opts.gram_degree_cap)
