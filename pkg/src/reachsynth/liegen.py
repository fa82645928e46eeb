"""Lie derivatives and infinitesimal generators along controlled dynamics.

For a scalar polynomial v and the control-affine system dx = f + g u the
derivative of v along trajectories is

    L_v(x) = grad(v) . f(x) + grad(v) . g(x) u(x),

which is affine in the coefficients of a polynomial controller template.  For
the SDE pathway the generator picks up the diffusion term
(1/2) tr(sigma^T Hess(v) sigma), which does not involve the controller and so
lands in the constant part.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

from .polycore import Polynomial, poly_dot
from .problem import AffineControlSystem, ControllerTemplate


@dataclass(frozen=True)
class AffineInCoefficients:
    """Polynomial whose coefficients are affine in controller unknowns.

    ``instantiate(c)`` returns ``constant_part + sum_i c[i] * linear_part[i]``,
    which equals the generator of the controller instantiated at ``c``.
    """

    n_vars: int
    constant_part: Polynomial
    linear_part: Dict[int, Polynomial]

    def instantiate(self, coeffs: Sequence[float]) -> Polynomial:
        out = self.constant_part
        for idx, poly in self.linear_part.items():
            c = coeffs[idx]
            if c != 0.0:
                out = out + poly.scale(c)
        return out

    def map_indices(self, offset: int) -> "AffineInCoefficients":
        return AffineInCoefficients(
            self.n_vars,
            self.constant_part,
            {idx + offset: p for idx, p in self.linear_part.items()},
        )


def _diffusion_term(v: Polynomial, sigma) -> Polynomial:
    """(1/2) tr(sigma^T Hess(v) sigma) as a polynomial."""
    n = v.n_vars
    hess = v.hessian()
    k = len(sigma[0])
    out = Polynomial.zero(n)
    for l in range(k):
        col = [sigma[i][l] for i in range(n)]
        for i in range(n):
            if hess[i][i].is_zero() and all(hess[i][j].is_zero() for j in range(n)):
                continue
            for j in range(n):
                hij = hess[i][j]
                if hij.is_zero():
                    continue
                out = out + col[i] * hij * col[j]
    return out.scale(0.5)


def lie_derivative_ode(
    v: Polynomial, sys: AffineControlSystem, tmpl: ControllerTemplate
) -> AffineInCoefficients:
    """Derivative of v along dx = f + g u, affine in the template coefficients."""
    if v.n_vars != sys.n:
        raise ValueError(f"v has {v.n_vars} variables, system has {sys.n}")
    if tmpl.n_vars != sys.n or tmpl.m != sys.m:
        raise ValueError("template shape does not match the system")
    grad = v.gradient()
    constant = poly_dot(grad, sys.f)
    basis = tmpl.basis
    linear: Dict[int, Polynomial] = {}
    for j in range(sys.m):
        # grad(v) . column j of g
        gj = poly_dot(grad, [sys.g[i][j] for i in range(sys.n)])
        if gj.is_zero():
            continue
        for b, mono in enumerate(basis):
            entry = gj * Polynomial.monomial(sys.n, mono)
            if not entry.is_zero():
                linear[tmpl.coeff_index(j, b)] = entry
    return AffineInCoefficients(sys.n, constant, linear)


def generator_sde(
    v: Polynomial, sys: AffineControlSystem, tmpl: ControllerTemplate
) -> AffineInCoefficients:
    """Infinitesimal generator of v for the SDE pathway (sigma required)."""
    if sys.sigma is None:
        raise ValueError("generator_sde requires a stochastic system (sigma present)")
    ode = lie_derivative_ode(v, sys, tmpl)
    diffusion = _diffusion_term(v, sys.sigma)
    return AffineInCoefficients(
        ode.n_vars, ode.constant_part + diffusion, ode.linear_part
    )


def generator_of(
    v: Polynomial, sys: AffineControlSystem, tmpl: ControllerTemplate
) -> AffineInCoefficients:
    """Lie derivative or SDE generator, depending on the system kind."""
    if sys.is_stochastic:
        return generator_sde(v, sys, tmpl)
    return lie_derivative_ode(v, sys, tmpl)


def generator_closed_loop(
    v: Polynomial,
    sys: AffineControlSystem,
    controller: Sequence[Polynomial],
    include_diffusion: Optional[bool] = None,
) -> Polynomial:
    """Generator of v under a fixed polynomial controller.

    ``include_diffusion`` defaults to whether the system carries noise.
    """
    if len(controller) != sys.m:
        raise ValueError(f"controller has {len(controller)} outputs, expected {sys.m}")
    grad = v.gradient()
    closed_f = []
    for i in range(sys.n):
        fi = sys.f[i]
        for j in range(sys.m):
            fi = fi + sys.g[i][j] * controller[j]
        closed_f.append(fi)
    out = poly_dot(grad, closed_f)
    if include_diffusion is None:
        include_diffusion = sys.is_stochastic
    if include_diffusion:
        if sys.sigma is None:
            raise ValueError("diffusion requested but the system has no sigma")
        out = out + _diffusion_term(v, sys.sigma)
    return out
