"""Sparse multivariate polynomial arithmetic.

A monomial is an exponent tuple ``(e_0, ..., e_{n-1})`` of non-negative
integers, one entry per state variable.  A :class:`Polynomial` maps monomials
to 64-bit float coefficients.  Polynomials are treated as immutable after
construction; all operations return fresh objects, so instances can be shared
freely across threads.

Coefficients with magnitude below ``PRUNE_TOL`` are dropped during
normalization to keep rounding noise from inflating the term maps.
"""

from __future__ import annotations

import math
from typing import Dict, Iterable, Mapping, Sequence, Tuple

import numpy as np

Monomial = Tuple[int, ...]

PRUNE_TOL = 1e-14


def mono_degree(mono: Monomial) -> int:
    return sum(mono)


def _grlex_key(mono: Monomial):
    # graded lexicographic: lower total degree first, then earlier variables
    # carry higher powers first ((1,0) sorts before (0,1)).
    return (sum(mono), tuple(-e for e in mono))


def monomial_basis(n_vars: int, max_degree: int) -> list[Monomial]:
    """All monomials of total degree <= max_degree, in graded-lex order."""
    if n_vars < 1:
        raise ValueError(f"n_vars must be >= 1, got {n_vars}")
    if max_degree < 0:
        raise ValueError(f"max_degree must be >= 0, got {max_degree}")

    monos: list[Monomial] = []

    def rec(prefix: list[int], remaining_vars: int, budget: int) -> None:
        if remaining_vars == 0:
            monos.append(tuple(prefix))
            return
        for e in range(budget + 1):
            rec(prefix + [e], remaining_vars - 1, budget - e)

    rec([], n_vars, max_degree)
    monos.sort(key=_grlex_key)
    return monos


class Polynomial:
    """Sparse polynomial in ``n_vars`` real variables with float coefficients."""

    __slots__ = ("n_vars", "terms")

    def __init__(self, n_vars: int, terms: Mapping[Monomial, float] | None = None):
        if n_vars < 1:
            raise ValueError(f"n_vars must be >= 1, got {n_vars}")
        self.n_vars = n_vars
        clean: Dict[Monomial, float] = {}
        if terms:
            for mono, coef in terms.items():
                mono = tuple(int(e) for e in mono)
                if len(mono) != n_vars:
                    raise ValueError(
                        f"monomial {mono} has {len(mono)} exponents, expected {n_vars}"
                    )
                if any(e < 0 for e in mono):
                    raise ValueError(f"negative exponent in monomial {mono}")
                c = clean.get(mono, 0.0) + float(coef)
                if c == 0.0:
                    clean.pop(mono, None)
                else:
                    clean[mono] = c
        for mono in [m for m, c in clean.items() if abs(c) < PRUNE_TOL]:
            del clean[mono]
        self.terms = clean

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero(n_vars: int) -> "Polynomial":
        return Polynomial(n_vars)

    @staticmethod
    def constant(n_vars: int, value: float) -> "Polynomial":
        return Polynomial(n_vars, {(0,) * n_vars: value})

    @staticmethod
    def variable(n_vars: int, index: int) -> "Polynomial":
        if not 0 <= index < n_vars:
            raise IndexError(f"variable index {index} out of range for {n_vars} vars")
        mono = tuple(1 if i == index else 0 for i in range(n_vars))
        return Polynomial(n_vars, {mono: 1.0})

    @staticmethod
    def monomial(n_vars: int, mono: Monomial, coef: float = 1.0) -> "Polynomial":
        return Polynomial(n_vars, {tuple(mono): coef})

    # -- basic queries ------------------------------------------------------

    @property
    def degree(self) -> int:
        """Total degree; the zero polynomial has degree 0 by convention."""
        if not self.terms:
            return 0
        return max(mono_degree(m) for m in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def coefficient(self, mono: Monomial) -> float:
        return self.terms.get(tuple(mono), 0.0)

    def sorted_terms(self) -> list[tuple[Monomial, float]]:
        return sorted(self.terms.items(), key=lambda kv: _grlex_key(kv[0]))

    # -- arithmetic ---------------------------------------------------------

    def _check_compat(self, other: "Polynomial") -> None:
        if self.n_vars != other.n_vars:
            raise ValueError(
                f"variable-count mismatch: {self.n_vars} vs {other.n_vars}"
            )

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.n_vars, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        self._check_compat(other)
        out = dict(self.terms)
        for mono, coef in other.terms.items():
            out[mono] = out.get(mono, 0.0) + coef
        return Polynomial(self.n_vars, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.n_vars, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.n_vars, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        self._check_compat(other)
        out: Dict[Monomial, float] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                mono = tuple(a + b for a, b in zip(m1, m2))
                out[mono] = out.get(mono, 0.0) + c1 * c2
        return Polynomial(self.n_vars, out)

    __rmul__ = __mul__

    def __pow__(self, exponent: int):
        if exponent < 0:
            raise ValueError("negative powers are not polynomials")
        result = Polynomial.constant(self.n_vars, 1.0)
        base = self
        e = exponent
        while e:
            if e & 1:
                result = result * base
            base = base * base
            e >>= 1
        return result

    def scale(self, factor: float) -> "Polynomial":
        return Polynomial(self.n_vars, {m: c * factor for m, c in self.terms.items()})

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.n_vars == other.n_vars and self.terms == other.terms

    __hash__ = None  # term maps are dicts; instances are not hashable

    # -- calculus -----------------------------------------------------------

    def differentiate(self, var_index: int) -> "Polynomial":
        """Formal partial derivative with respect to variable ``var_index``."""
        if not 0 <= var_index < self.n_vars:
            raise IndexError(
                f"variable index {var_index} out of range for {self.n_vars} vars"
            )
        out: Dict[Monomial, float] = {}
        for mono, coef in self.terms.items():
            e = mono[var_index]
            if e == 0:
                continue
            lowered = tuple(
                v - 1 if i == var_index else v for i, v in enumerate(mono)
            )
            out[lowered] = out.get(lowered, 0.0) + coef * e
        return Polynomial(self.n_vars, out)

    def gradient(self) -> list["Polynomial"]:
        return [self.differentiate(i) for i in range(self.n_vars)]

    def hessian(self) -> list[list["Polynomial"]]:
        """Symmetric matrix of second partials (symmetric by construction)."""
        grad = self.gradient()
        n = self.n_vars
        hess = [[None] * n for _ in range(n)]
        for i in range(n):
            for j in range(i, n):
                hij = grad[i].differentiate(j)
                hess[i][j] = hij
                hess[j][i] = hij
        return hess

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, point):
        """Evaluate at a point, or at a batch of points.

        ``point`` may be a length-``n_vars`` sequence (returns a float) or an
        array of shape ``(..., n_vars)`` (returns an array of shape ``(...)``).
        """
        pts = np.asarray(point, dtype=float)
        if pts.shape[-1:] != (self.n_vars,):
            raise ValueError(
                f"dimension mismatch: point has shape {pts.shape}, "
                f"expected last axis {self.n_vars}"
            )
        scalar = pts.ndim == 1
        if not self.terms:
            return 0.0 if scalar else np.zeros(pts.shape[:-1])
        exps = np.array(list(self.terms.keys()), dtype=np.int64)  # (T, n)
        coefs = np.array(list(self.terms.values()))  # (T,)
        # (..., T, n) powers; 0**0 == 1 as required for absent variables
        powers = pts[..., None, :] ** exps
        values = powers.prod(axis=-1) @ coefs
        if scalar:
            return float(values)
        return values

    # -- rendering ----------------------------------------------------------

    def to_string(self, var_names: Sequence[str] | None = None) -> str:
        """Render in the problem-file grammar (reparse gives the same terms)."""
        if var_names is None:
            var_names = self.default_var_names(self.n_vars)
        if len(var_names) != self.n_vars:
            raise ValueError("wrong number of variable names")
        if not self.terms:
            return "0"
        parts: list[str] = []
        for mono, coef in self.sorted_terms():
            factors = []
            for name, e in zip(var_names, mono):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}^{e}")
            mag = abs(coef)
            if factors and mag == 1.0:
                body = "*".join(factors)
            elif factors:
                body = "*".join([repr(mag)] + factors)
            else:
                body = repr(mag)
            sign = "-" if coef < 0 else "+"
            parts.append((sign, body))
        first_sign, first_body = parts[0]
        text = first_body if first_sign == "+" else f"-{first_body}"
        for sign, body in parts[1:]:
            text += f" {sign} {body}"
        return text

    @staticmethod
    def default_var_names(n_vars: int) -> list[str]:
        if n_vars <= 3:
            return ["x", "y", "z"][:n_vars]
        return [f"x{i + 1}" for i in range(n_vars)]

    def __repr__(self):
        return f"Polynomial({self.n_vars}, {self.to_string()!r})"


def poly_dot(a: Iterable[Polynomial], b: Iterable[Polynomial]) -> Polynomial:
    """Dot product of two equal-length polynomial vectors."""
    la, lb = list(a), list(b)
    if len(la) != len(lb):
        raise ValueError(f"length mismatch: {len(la)} vs {len(lb)}")
    if not la:
        raise ValueError("empty vectors")
    out = Polynomial.zero(la[0].n_vars)
    for pa, pb in zip(la, lb):
        out = out + pa * pb
    return out
