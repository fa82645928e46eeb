"""Empirical verification of synthesized controllers.

Everything here is independent of the synthesis pipeline: algebraic
conditions are re-checked on dense grids, closed-loop behaviour is replayed
with an RK4 integrator (ODE) or Euler-Maruyama scheme (SDE), and the
probabilistic claims are exercised by Monte Carlo over a counter-based RNG so
that estimates are bit-reproducible regardless of batching.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .liegen import generator_closed_loop
from .polycore import Polynomial
from .problem import ReachAvoidProblem
from .sosenc import SemialgebraicRegion, quadrature_grid


# ---------------------------------------------------------------------------
# grid residuals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridResidual:
    label: str
    min_value: float
    argmin: Tuple[float, ...]
    n_points: int


def _dense_grid(problem: ReachAvoidProblem, resolution: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, resolution) for lo, hi in problem.bounding_box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def grid_check(
    problem: ReachAvoidProblem,
    exprs: Sequence[Tuple[str, Polynomial, SemialgebraicRegion]],
    resolution: int = 201,
) -> List[GridResidual]:
    """Minimum of each expression over the grid points inside its region."""
    pts = _dense_grid(problem, resolution)
    out = []
    for label, poly, region in exprs:
        mask = region.contains(pts)
        if not np.any(mask):
            raise ValueError(f"region for {label!r} contains no grid point")
        vals = poly.evaluate(pts[mask])
        idx = int(np.argmin(vals))
        out.append(
            GridResidual(
                label=label,
                min_value=float(vals[idx]),
                argmin=tuple(float(v) for v in pts[mask][idx]),
                n_points=int(mask.sum()),
            )
        )
    return out


# ---------------------------------------------------------------------------
# deterministic simulation
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryOutcome:
    kind: str  # reached | left_safe | timeout | diverged
    hit_time: Optional[float]
    times: np.ndarray
    path: np.ndarray  # (n_samples, n)

    @property
    def final_state(self) -> np.ndarray:
        return self.path[-1]


def _closed_field(problem: ReachAvoidProblem, controller: Sequence[Polynomial]):
    sys = problem.system

    def field_at(x: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(x)
        u = np.stack([uj.evaluate(pts) for uj in controller], axis=-1)  # (M, m)
        f = np.stack([fi.evaluate(pts) for fi in sys.f], axis=-1)  # (M, n)
        g = np.stack(
            [
                np.stack([sys.g[i][j].evaluate(pts) for j in range(sys.m)], axis=-1)
                for i in range(sys.n)
            ],
            axis=-2,
        )  # (M, n, m)
        out = f + np.einsum("pij,pj->pi", g, u)
        return out[0] if x.ndim == 1 else out

    return field_at


def _rk4_step(field, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = field(x)
    k2 = field(x + 0.5 * dt * k1)
    k3 = field(x + 0.5 * dt * k2)
    k4 = field(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _refine_event(field, x_prev, dt, event_value, tol=1e-6):
    """Bisect the step fraction at which event_value(x) crosses zero."""
    lo, hi = 0.0, dt
    for _ in range(60):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        x_mid = _rk4_step(field, x_prev, mid)
        if event_value(x_mid) <= 0.0:
            hi = mid
        else:
            lo = mid
    return hi, _rk4_step(field, x_prev, hi)


def simulate_ode(
    problem: ReachAvoidProblem,
    controller: Sequence[Polynomial],
    x0: Sequence[float],
    dt: float = 1e-3,
    T: float = 100.0,
    diverge_radius: float = 1e6,
    record_stride: int = 1,
) -> TrajectoryOutcome:
    """Closed-loop RK4 run until target entry, safety exit, blowup, or timeout.

    Event times are refined by bisection on the last step to 1e-6.
    """
    if problem.is_stochastic:
        raise ValueError("simulate_ode expects a deterministic problem")
    x = np.asarray(x0, dtype=float)
    if x.shape != (problem.n,):
        raise ValueError(f"x0 must have {problem.n} entries")
    h0 = problem.h.evaluate(x)
    if h0 <= 0 and problem.h_r.evaluate(x) >= 0:
        raise ValueError("x0 lies outside the safe set and outside the target")

    field = _closed_field(problem, controller)
    h, h_r = problem.h, problem.h_r
    times = [0.0]
    path = [x.copy()]

    if h_r.evaluate(x) < 0:
        return TrajectoryOutcome("reached", 0.0, np.array(times), np.array(path))

    n_steps = int(math.ceil(T / dt))
    t = 0.0
    for step in range(1, n_steps + 1):
        x_prev = x
        x = _rk4_step(field, x_prev, dt)
        t = step * dt
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > diverge_radius:
            times.append(t)
            path.append(x.copy())
            return TrajectoryOutcome("diverged", None, np.array(times), np.array(path))
        if h_r.evaluate(x) < 0:
            frac, x_hit = _refine_event(
                field, x_prev, dt, lambda s: h_r.evaluate(s)
            )
            times.append(t - dt + frac)
            path.append(x_hit)
            return TrajectoryOutcome(
                "reached", t - dt + frac, np.array(times), np.array(path)
            )
        if h.evaluate(x) <= 0:
            frac, x_exit = _refine_event(
                field, x_prev, dt, lambda s: h.evaluate(s)
            )
            times.append(t - dt + frac)
            path.append(x_exit)
            return TrajectoryOutcome(
                "left_safe", None, np.array(times), np.array(path)
            )
        if step % record_stride == 0:
            times.append(t)
            path.append(x.copy())
    return TrajectoryOutcome("timeout", None, np.array(times), np.array(path))


def interior_seed_grid(
    problem: ReachAvoidProblem, count: int = 100, margin: float = 1e-3
) -> np.ndarray:
    """Deterministic spread of ``count`` initial states with h >= margin."""
    resolution = 16
    while True:
        pts = _dense_grid(problem, resolution)
        mask = problem.h.evaluate(pts) >= margin
        if mask.sum() >= count:
            inside = pts[mask]
            idx = np.linspace(0, len(inside) - 1, count).round().astype(int)
            return inside[idx]
        resolution *= 2
        if resolution > 4096:
            raise ValueError("safe set too small for the requested seed count")


# ---------------------------------------------------------------------------
# trajectory certificates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CertificateCheck:
    passed: bool
    worst_margin: float
    detail: str


def check_exponential_certificate(
    traj: TrajectoryOutcome, h: Polynomial, rate: float, tol: float = 1e-6
) -> CertificateCheck:
    """h must dominate its exponential lower envelope until the target hit."""
    mask = _pre_hit_mask(traj)
    ts = traj.times[mask]
    hs = h.evaluate(traj.path[mask])
    envelope = math.e ** (rate * ts) * hs[0] if len(ts) else np.array([])
    margins = hs - envelope
    worst = float(margins.min()) if len(margins) else 0.0
    return CertificateCheck(
        passed=bool(worst >= -tol),
        worst_margin=worst,
        detail=f"min h - e^(rate t) h0 = {worst:.3e} over {len(ts)} samples",
    )


def check_asymptotic_certificate(
    traj: TrajectoryOutcome,
    h: Polynomial,
    w: Polynomial,
    tol: float = 1e-6,
) -> CertificateCheck:
    """w grows at least linearly at rate h(x0), and h never decreases."""
    mask = _pre_hit_mask(traj)
    ts = traj.times[mask]
    hs = h.evaluate(traj.path[mask])
    ws = w.evaluate(traj.path[mask])
    if len(ts) == 0:
        return CertificateCheck(True, 0.0, "no pre-hit samples")
    growth = ws - ws[0] - hs[0] * ts
    mono = np.diff(hs, prepend=hs[0])
    worst = float(min(growth.min(), mono.min()))
    return CertificateCheck(
        passed=bool(growth.min() >= -tol and mono.min() >= -tol),
        worst_margin=worst,
        detail=(
            f"min w-growth margin {growth.min():.3e}, "
            f"min h increment {mono.min():.3e}"
        ),
    )


def _pre_hit_mask(traj: TrajectoryOutcome) -> np.ndarray:
    if traj.kind == "reached" and traj.hit_time is not None:
        return traj.times <= traj.hit_time + 1e-12
    return np.ones_like(traj.times, dtype=bool)


# ---------------------------------------------------------------------------
# stochastic simulation (stopped process)
# ---------------------------------------------------------------------------

_NOISE_CHUNK = 256


def _path_generator(global_seed: int, path_seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[global_seed, path_seed]))


@dataclass
class StoppedBatch:
    kinds: List[str]
    stop_states: np.ndarray  # (M, n)
    stop_times: np.ndarray  # (M,)
    integrals: np.ndarray  # (M, n_observables) of int_0^tau obs(x_s) ds


def simulate_sde_batch(
    problem: ReachAvoidProblem,
    controller: Sequence[Polynomial],
    x0: Sequence[float],
    n_paths: int,
    dt: float = 1e-3,
    T: float = 100.0,
    global_seed: int = 42,
    path_seed_base: int = 0,
    observables: Sequence[Polynomial] = (),
    diverge_radius: float = 1e6,
) -> StoppedBatch:
    """Euler-Maruyama paths stopped at the first exit of (safe \\ target).

    Noise for path p, step n comes from a Philox stream keyed by
    (global_seed, path_seed_base + p), so results do not depend on batching.
    """
    sys = problem.system
    if not problem.is_stochastic:
        raise ValueError("simulate_sde_batch expects a stochastic problem")
    n, kdim = sys.n, sys.noise_dim
    x0 = np.asarray(x0, dtype=float)
    field = _closed_field(problem, controller)
    h, h_r = problem.h, problem.h_r

    X = np.tile(x0, (n_paths, 1))
    alive = np.ones(n_paths, dtype=bool)
    kinds = ["timeout"] * n_paths
    stop_states = np.tile(x0, (n_paths, 1))
    stop_times = np.full(n_paths, T)
    integrals = np.zeros((n_paths, len(observables)))
    gens = [
        _path_generator(global_seed, path_seed_base + p) for p in range(n_paths)
    ]

    def finish(indices: np.ndarray, kind: str, t: float, states: np.ndarray):
        for local, p in enumerate(indices):
            kinds[p] = kind
            stop_states[p] = states[local]
            stop_times[p] = t

    # immediate classification of the initial state
    hr0 = h_r.evaluate(x0)
    h0 = h.evaluate(x0)
    if hr0 < 0:
        finish(np.arange(n_paths), "reached", 0.0, X)
        return StoppedBatch(kinds, stop_states, stop_times, integrals)
    if h0 <= 0:
        finish(np.arange(n_paths), "left_safe", 0.0, X)
        return StoppedBatch(kinds, stop_states, stop_times, integrals)

    n_steps = int(math.ceil(T / dt))
    sqrt_dt = math.sqrt(dt)
    noise_buf = np.zeros((n_paths, _NOISE_CHUNK, kdim))

    step = 0
    while step < n_steps and alive.any():
        # refill the per-path noise buffers at chunk boundaries
        if step % _NOISE_CHUNK == 0:
            for p in np.flatnonzero(alive):
                noise_buf[p] = gens[p].standard_normal((_NOISE_CHUNK, kdim))
        idx = np.flatnonzero(alive)
        Xa = X[idx]
        if observables:
            for oi, obs in enumerate(observables):
                integrals[idx, oi] += obs.evaluate(Xa) * dt
        drift = field(Xa)
        sig = np.stack(
            [
                np.stack(
                    [sys.sigma[i][l].evaluate(Xa) for l in range(kdim)], axis=-1
                )
                for i in range(n)
            ],
            axis=-2,
        )  # (Ma, n, k)
        xi = noise_buf[idx, step % _NOISE_CHUNK]
        Xa = Xa + drift * dt + sqrt_dt * np.einsum("pik,pk->pi", sig, xi)
        X[idx] = Xa
        step += 1
        t = step * dt

        bad = ~np.all(np.isfinite(Xa), axis=1) | (
            np.linalg.norm(Xa, axis=1) > diverge_radius
        )
        reached = (~bad) & (h_r.evaluate(Xa) < 0)
        exited = (~bad) & (~reached) & (h.evaluate(Xa) <= 0)
        if bad.any():
            finish(idx[bad], "diverged", t, Xa[bad])
        if reached.any():
            finish(idx[reached], "reached", t, Xa[reached])
        if exited.any():
            finish(idx[exited], "left_safe", t, Xa[exited])
        stopped = bad | reached | exited
        if stopped.any():
            alive[idx[stopped]] = False

    still = np.flatnonzero(alive)
    if len(still):
        finish(still, "timeout", float(n_steps * dt), X[still])
    return StoppedBatch(kinds, stop_states, stop_times, integrals)


def simulate_sde_stopped(
    problem: ReachAvoidProblem,
    controller: Sequence[Polynomial],
    x0: Sequence[float],
    dt: float = 1e-3,
    T: float = 100.0,
    path_seed: int = 0,
    global_seed: int = 42,
) -> TrajectoryOutcome:
    """Single stopped path with the full state history recorded."""
    sys = problem.system
    if not problem.is_stochastic:
        raise ValueError("simulate_sde_stopped expects a stochastic problem")
    x = np.asarray(x0, dtype=float)
    field = _closed_field(problem, controller)
    h, h_r = problem.h, problem.h_r
    gen = _path_generator(global_seed, path_seed)
    kdim = sys.noise_dim
    times = [0.0]
    path = [x.copy()]
    if h_r.evaluate(x) < 0:
        return TrajectoryOutcome("reached", 0.0, np.array(times), np.array(path))
    if h.evaluate(x) <= 0:
        return TrajectoryOutcome("left_safe", None, np.array(times), np.array(path))
    n_steps = int(math.ceil(T / dt))
    sqrt_dt = math.sqrt(dt)
    buf = None
    for step in range(n_steps):
        if step % _NOISE_CHUNK == 0:
            buf = gen.standard_normal((_NOISE_CHUNK, kdim))
        xi = buf[step % _NOISE_CHUNK]
        sig = np.array(
            [[sys.sigma[i][l].evaluate(x) for l in range(kdim)] for i in range(sys.n)]
        )
        x = x + field(x) * dt + sqrt_dt * (sig @ xi)
        t = (step + 1) * dt
        times.append(t)
        path.append(x.copy())
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > 1e6:
            return TrajectoryOutcome("diverged", None, np.array(times), np.array(path))
        if h_r.evaluate(x) < 0:
            return TrajectoryOutcome("reached", t, np.array(times), np.array(path))
        if h.evaluate(x) <= 0:
            return TrajectoryOutcome("left_safe", None, np.array(times), np.array(path))
    return TrajectoryOutcome("timeout", None, np.array(times), np.array(path))


@dataclass(frozen=True)
class ProbabilityEstimate:
    p_hat: float
    se: float
    bound: float
    bound_ok: bool
    n_paths: int


def estimate_reach_probability(
    problem: ReachAvoidProblem,
    controller: Sequence[Polynomial],
    x0: Sequence[float],
    M: int = 10000,
    dt: float = 1e-3,
    T: float = 100.0,
    global_seed: int = 42,
    h_cert: Optional[Polynomial] = None,
) -> ProbabilityEstimate:
    """Monte Carlo reach probability with the certified lower bound check.

    ``h_cert`` defaults to the safe-set function h; pass the tightened
    classification polynomial for relaxed certificates.
    """
    x0 = np.asarray(x0, dtype=float)
    if problem.h.evaluate(x0) <= 0:
        raise ValueError("x0 lies outside the safe set; the bound does not apply")
    batch = simulate_sde_batch(
        problem, controller, x0, M, dt=dt, T=T, global_seed=global_seed
    )
    hits = sum(1 for kind in batch.kinds if kind == "reached")
    p_hat = hits / M
    se = math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / M)
    cert = h_cert if h_cert is not None else problem.h
    bound = float(cert.evaluate(x0))
    return ProbabilityEstimate(
        p_hat=p_hat,
        se=se,
        bound=bound,
        bound_ok=bool(p_hat >= bound - 3.0 * se),
        n_paths=M,
    )


@dataclass(frozen=True)
class DynkinCheck:
    lhs: float
    rhs: float
    residual: float
    se: float
    tolerance: float
    passed: bool


def check_dynkin(
    problem: ReachAvoidProblem,
    controller: Sequence[Polynomial],
    v: Polynomial,
    x0: Sequence[float],
    M: int = 4000,
    T_stop: float = 10.0,
    dt: float = 1e-3,
    global_seed: int = 42,
) -> DynkinCheck:
    """Monte Carlo check of E[v(x_tau)] = v(x0) + E[int_0^tau L_v ds].

    Both sides share the same paths; the residual is judged against the
    paired-difference standard error plus a discretization-bias allowance.
    """
    x0 = np.asarray(x0, dtype=float)
    Lv = generator_closed_loop(v, problem.system, controller)
    batch = simulate_sde_batch(
        problem,
        controller,
        x0,
        M,
        dt=dt,
        T=T_stop,
        global_seed=global_seed,
        observables=[Lv],
    )
    v_stop = v.evaluate(batch.stop_states)
    v0 = float(v.evaluate(x0))
    diffs = v_stop - v0 - batch.integrals[:, 0]
    lhs = float(np.mean(v_stop))
    rhs = v0 + float(np.mean(batch.integrals[:, 0]))
    residual = abs(float(np.mean(diffs)))
    se = float(np.std(diffs, ddof=1) / math.sqrt(M)) if M > 1 else 0.0
    tolerance = 4.0 * se + 0.01 * (1.0 + abs(lhs))
    return DynkinCheck(
        lhs=lhs,
        rhs=rhs,
        residual=residual,
        se=se,
        tolerance=tolerance,
        passed=bool(residual <= tolerance),
    )


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


def controller_norm(
    problem: ReachAvoidProblem,
    controller: Sequence[Polynomial],
    nominal: Optional[Sequence[Polynomial]] = None,
    resolution: int = 201,
) -> float:
    """sqrt of the quadrature integral of ||u - k||^2 over {h > 0}.

    Uses the same midpoint grid as the synthesis objective, so the value
    matches the square root of the optimized quadratic form to rounding.
    """
    nominal = list(nominal) if nominal is not None else list(problem.k)
    if len(nominal) != len(controller):
        raise ValueError("controller and nominal must have the same output count")
    pts, cell = quadrature_grid(problem, resolution)
    total = 0.0
    for uj, kj in zip(controller, nominal):
        diff = uj.evaluate(pts) - kj.evaluate(pts)
        total += float(np.sum(diff * diff)) * cell
    return math.sqrt(max(total, 0.0))


# ---------------------------------------------------------------------------
# delimited emissions
# ---------------------------------------------------------------------------


def write_trajectories_csv(
    path: str | Path,
    trajectories: Sequence[TrajectoryOutcome],
    var_names: Sequence[str],
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "t", *var_names])
        for pid, traj in enumerate(trajectories):
            for t, state in zip(traj.times, traj.path):
                writer.writerow([pid, f"{t:.9g}", *[f"{v:.9g}" for v in state]])


def write_vectorfield_csv(
    path: str | Path,
    problem: ReachAvoidProblem,
    controller: Sequence[Polynomial],
    resolution: int = 25,
) -> None:
    pts = _dense_grid(problem, resolution)
    mask = problem.h.evaluate(pts) > 0
    pts = pts[mask]
    field = _closed_field(problem, controller)
    vel = field(pts)
    names = list(problem.var_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*names, *[f"d{v}_dt" for v in names]])
        for x, dx in zip(pts, vel):
            writer.writerow([f"{v:.9g}" for v in (*x, *dx)])
