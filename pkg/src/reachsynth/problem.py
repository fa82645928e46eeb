"""Problem ingestion: polynomial text parser, `.ra` problem files, sanity checks.

A problem file is UTF-8 text with line-oriented sections::

    [system]
    vars = x y
    inputs = u1 u2
    f = "0", "0"
    g = [ "1", "0" ; "0", "1" ]
    sigma = [ "1" ; "0" ]          # optional; presence marks the SDE pathway
    [sets]
    safe_h = "1 - x^2 - y^2"
    target_hr = "0.01*(x - 0.9)^2 + y^2 - 0.01"
    bounding_box = [-1.5, 1.5] x [-1.5, 1.5]
    [inputs]
    u1 = [0.001, 1]
    u2 = free
    [nominal]
    k = "0", "0"
    [template]
    degree = 1

`#` starts a comment.  The safe set is {safe_h > 0}, the target set is
{target_hr < 0}.  Omitted sections fall back to defaults: nominal controller
zero, template degree 1, bounding box [-1.5, 1.5]^n.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .polycore import Monomial, Polynomial, monomial_basis

DEFAULT_BOX_HALF_WIDTH = 1.5
DEFAULT_TEMPLATE_DEGREE = 1


class PolynomialSyntaxError(ValueError):
    """Raised on malformed polynomial text; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class ProblemFormatError(ValueError):
    """Raised on malformed problem files, naming the offending section/key."""


# ---------------------------------------------------------------------------
# polynomial parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*^/()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise PolynomialSyntaxError(
                f"unexpected character {text[pos:pos + 1]!r}", pos
            )
        if m.lastgroup == "number":
            tokens.append(("number", m.group("number"), m.start("number")))
        elif m.lastgroup == "ident":
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    """Recursive descent over: expr := sign? term (('+'|'-') term)*;
    term := factor ('*' factor)*; factor := base ('^' uint)?;
    base := number | '(' int '/' int ')' | ident | '(' expr ')'.
    """

    def __init__(self, text: str, var_names: Sequence[str]):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0
        self.var_index = {name: i for i, name in enumerate(var_names)}
        self.n_vars = len(var_names)
        if self.n_vars == 0:
            raise ValueError("at least one variable name is required")

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, val, off = self.peek()
        if kind != "op" or val != op:
            raise PolynomialSyntaxError(f"expected {op!r}, found {val or 'end'!r}", off)
        return self.advance()

    def parse(self) -> Polynomial:
        poly = self.parse_expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise PolynomialSyntaxError(f"trailing input {val!r}", off)
        return poly

    def parse_expr(self) -> Polynomial:
        kind, val, _ = self.peek()
        negate = False
        if kind == "op" and val in "+-":
            self.advance()
            negate = val == "-"
        poly = self.parse_term()
        if negate:
            poly = -poly
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                rhs = self.parse_term()
                poly = poly - rhs if val == "-" else poly + rhs
            else:
                return poly

    def parse_term(self) -> Polynomial:
        poly = self.parse_factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == "*":
                self.advance()
                poly = poly * self.parse_factor()
            else:
                return poly

    def parse_factor(self) -> Polynomial:
        base = self.parse_base()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.advance()
            ekind, eval_, eoff = self.advance()
            if ekind != "number" or not eval_.isdigit():
                raise PolynomialSyntaxError(
                    f"malformed exponent {eval_ or 'end'!r}", eoff
                )
            return base ** int(eval_)
        return base

    def parse_base(self) -> Polynomial:
        kind, val, off = self.advance()
        if kind == "number":
            return Polynomial.constant(self.n_vars, float(val))
        if kind == "ident":
            idx = self.var_index.get(val)
            if idx is None:
                raise PolynomialSyntaxError(f"unknown variable {val!r}", off)
            return Polynomial.variable(self.n_vars, idx)
        if kind == "op" and val == "(":
            inner = self.parse_expr()
            kind2, val2, off2 = self.peek()
            if kind2 == "op" and val2 == "/":
                # rational literal: the numerator must be a bare number
                if len(inner.terms) > 1 or any(
                    sum(m) > 0 for m in inner.terms
                ):
                    raise PolynomialSyntaxError(
                        "rational numerator must be a number", off2
                    )
                self.advance()
                dkind, dval, doff = self.advance()
                if dkind != "number":
                    raise PolynomialSyntaxError(
                        f"malformed rational denominator {dval or 'end'!r}", doff
                    )
                denom = float(dval)
                if denom == 0.0:
                    raise PolynomialSyntaxError("division by zero", doff)
                numer = inner.coefficient((0,) * self.n_vars)
                self.expect_op(")")
                return Polynomial.constant(self.n_vars, numer / denom)
            self.expect_op(")")
            return inner
        raise PolynomialSyntaxError(f"unexpected token {val or 'end'!r}", off)


def parse_polynomial(text: str, variable_names: Sequence[str]) -> Polynomial:
    """Parse polynomial text over the given (ordered) variable names."""
    return _Parser(text, variable_names).parse()


# ---------------------------------------------------------------------------
# problem data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineControlSystem:
    """dx = f(x) + g(x) u, optionally + sigma(x) dW for the SDE pathway."""

    n: int
    m: int
    f: Tuple[Polynomial, ...]
    g: Tuple[Tuple[Polynomial, ...], ...]  # n rows x m columns
    sigma: Optional[Tuple[Tuple[Polynomial, ...], ...]] = None  # n rows x k cols

    @property
    def is_stochastic(self) -> bool:
        return self.sigma is not None

    @property
    def noise_dim(self) -> int:
        return len(self.sigma[0]) if self.sigma else 0

    def __post_init__(self):
        if len(self.f) != self.n:
            raise ValueError(f"f has {len(self.f)} entries, expected {self.n}")
        if len(self.g) != self.n or any(len(row) != self.m for row in self.g):
            raise ValueError(f"g must be {self.n}x{self.m}")
        polys = list(self.f) + [p for row in self.g for p in row]
        if self.sigma is not None:
            if len(self.sigma) != self.n:
                raise ValueError(f"sigma must have {self.n} rows")
            widths = {len(row) for row in self.sigma}
            if len(widths) != 1:
                raise ValueError("sigma rows have inconsistent widths")
            polys += [p for row in self.sigma for p in row]
        for p in polys:
            if p.n_vars != self.n:
                raise ValueError("all system polynomials must share n_vars == n")


@dataclass(frozen=True)
class ControllerTemplate:
    """Polynomial feedback template: one unknown per (output, basis monomial)."""

    n_vars: int
    m: int
    degree: int

    @property
    def basis(self) -> list[Monomial]:
        return monomial_basis(self.n_vars, self.degree)

    @property
    def n_coeffs(self) -> int:
        return self.m * len(self.basis)

    def coeff_index(self, output: int, basis_pos: int) -> int:
        return output * len(self.basis) + basis_pos

    def instantiate(self, coeffs: Sequence[float]) -> list[Polynomial]:
        basis = self.basis
        if len(coeffs) != self.m * len(basis):
            raise ValueError(
                f"expected {self.m * len(basis)} coefficients, got {len(coeffs)}"
            )
        out = []
        for j in range(self.m):
            terms = {}
            for b, mono in enumerate(basis):
                terms[mono] = coeffs[self.coeff_index(j, b)]
            out.append(Polynomial(self.n_vars, terms))
        return out


@dataclass(frozen=True)
class ReachAvoidProblem:
    """Dynamics, sets, input box, nominal controller, and controller template.

    The safe set is {h > 0}; the target set is {h_r < 0}.  ``input_box`` holds
    one ``(lo, hi)`` pair per input channel, or ``None`` for a free channel.
    """

    system: AffineControlSystem
    h: Polynomial
    h_r: Polynomial
    input_box: Tuple[Optional[Tuple[float, float]], ...]
    k: Tuple[Polynomial, ...]
    template_degree: int
    bounding_box: Tuple[Tuple[float, float], ...]
    var_names: Tuple[str, ...]
    input_names: Tuple[str, ...]

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def m(self) -> int:
        return self.system.m

    @property
    def is_stochastic(self) -> bool:
        return self.system.is_stochastic

    @property
    def template(self) -> ControllerTemplate:
        return ControllerTemplate(self.n, self.m, self.template_degree)

    def __post_init__(self):
        n, m = self.system.n, self.system.m
        for p in (self.h, self.h_r, *self.k):
            if p.n_vars != n:
                raise ValueError("set/controller polynomials must share n_vars == n")
        if len(self.k) != m:
            raise ValueError(f"nominal controller has {len(self.k)} entries, expected {m}")
        if len(self.input_box) != m:
            raise ValueError("one input interval (or free) per channel is required")
        if len(self.bounding_box) != n:
            raise ValueError("bounding box must have one interval per state variable")
        for lo, hi in self.bounding_box:
            if not lo < hi:
                raise ValueError(f"degenerate bounding-box interval [{lo}, {hi}]")
        for box in self.input_box:
            if box is not None and not box[0] <= box[1]:
                raise ValueError(f"empty input interval {box}")
        if self.template_degree < 0:
            raise ValueError("template degree must be >= 0")


# ---------------------------------------------------------------------------
# problem-file loader
# ---------------------------------------------------------------------------


def _strip_comment(line: str) -> str:
    idx = line.find("#")
    return line if idx < 0 else line[:idx]


def _split_sections(text: str) -> Dict[str, Dict[str, str]]:
    sections: Dict[str, Dict[str, str]] = {}
    current: Optional[str] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            sections.setdefault(current, {})
            continue
        if current is None:
            raise ProblemFormatError(f"line {lineno}: content before any [section]")
        if "=" not in line:
            raise ProblemFormatError(
                f"line {lineno} in [{current}]: expected 'key = value'"
            )
        key, value = line.split("=", 1)
        key = key.strip().lower()
        if key in sections[current]:
            raise ProblemFormatError(f"duplicate key {key!r} in [{current}]")
        sections[current][key] = value.strip()
    return sections


def _split_quoted_list(value: str, where: str) -> list[str]:
    """Split a comma-separated list of double-quoted strings."""
    items = []
    i = 0
    while i < len(value):
        ch = value[i]
        if ch in " \t,":
            i += 1
            continue
        if ch != '"':
            raise ProblemFormatError(f"{where}: expected quoted polynomial list")
        end = value.find('"', i + 1)
        if end < 0:
            raise ProblemFormatError(f"{where}: unterminated quote")
        items.append(value[i + 1 : end])
        i = end + 1
    if not items:
        raise ProblemFormatError(f"{where}: empty list")
    return items


def _parse_matrix(value: str, where: str) -> list[list[str]]:
    value = value.strip()
    if not (value.startswith("[") and value.endswith("]")):
        raise ProblemFormatError(f"{where}: expected [ ... ] matrix")
    body = value[1:-1]
    rows = [row for row in body.split(";")]
    return [_split_quoted_list(row, where) for row in rows]


def _parse_interval(value: str, where: str) -> Tuple[float, float]:
    m = re.fullmatch(r"\s*\[\s*([^,\]]+)\s*,\s*([^,\]]+)\s*\]\s*", value)
    if not m:
        raise ProblemFormatError(f"{where}: expected [lo, hi]")
    try:
        lo, hi = float(m.group(1)), float(m.group(2))
    except ValueError as exc:
        raise ProblemFormatError(f"{where}: non-numeric bound") from exc
    return lo, hi


def _parse_bounding_box(value: str, n: int, where: str) -> list[Tuple[float, float]]:
    pairs = re.findall(r"\[([^\]]+)\]", value)
    if len(pairs) != n:
        raise ProblemFormatError(
            f"{where}: expected {n} intervals, found {len(pairs)}"
        )
    out = []
    for body in pairs:
        parts = body.split(",")
        if len(parts) != 2:
            raise ProblemFormatError(f"{where}: expected [lo, hi] pairs")
        try:
            out.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise ProblemFormatError(f"{where}: non-numeric bound") from exc
    return out


def parse_problem_text(text: str) -> ReachAvoidProblem:
    """Parse problem-file text into a validated :class:`ReachAvoidProblem`."""
    sections = _split_sections(text)

    sys_sec = sections.get("system")
    if sys_sec is None:
        raise ProblemFormatError("missing [system] section")
    if "vars" not in sys_sec:
        raise ProblemFormatError("[system]: missing 'vars'")
    var_names = tuple(sys_sec["vars"].split())
    if not var_names or len(set(var_names)) != len(var_names):
        raise ProblemFormatError("[system]: vars must be distinct identifiers")
    n = len(var_names)
    if "inputs" not in sys_sec:
        raise ProblemFormatError("[system]: missing 'inputs'")
    input_names = tuple(sys_sec["inputs"].split())
    if not input_names or len(set(input_names)) != len(input_names):
        raise ProblemFormatError("[system]: inputs must be distinct identifiers")
    m = len(input_names)

    def poly(text_: str, where: str) -> Polynomial:
        try:
            return parse_polynomial(text_, var_names)
        except PolynomialSyntaxError as exc:
            raise ProblemFormatError(f"{where}: {exc}") from exc

    if "f" not in sys_sec:
        raise ProblemFormatError("[system]: missing 'f'")
    f_entries = _split_quoted_list(sys_sec["f"], "[system] f")
    if len(f_entries) != n:
        raise ProblemFormatError(
            f"[system] f: expected {n} entries, found {len(f_entries)}"
        )
    f = tuple(poly(t, "[system] f") for t in f_entries)

    if "g" not in sys_sec:
        raise ProblemFormatError("[system]: missing 'g'")
    g_rows = _parse_matrix(sys_sec["g"], "[system] g")
    if len(g_rows) != n or any(len(r) != m for r in g_rows):
        raise ProblemFormatError(
            f"[system] g: expected {n}x{m} matrix, found "
            f"{len(g_rows)}x{max((len(r) for r in g_rows), default=0)}"
        )
    g = tuple(tuple(poly(t, "[system] g") for t in row) for row in g_rows)

    sigma = None
    if "sigma" in sys_sec:
        s_rows = _parse_matrix(sys_sec["sigma"], "[system] sigma")
        if len(s_rows) != n:
            raise ProblemFormatError(f"[system] sigma: expected {n} rows")
        widths = {len(r) for r in s_rows}
        if len(widths) != 1:
            raise ProblemFormatError("[system] sigma: ragged rows")
        sigma = tuple(tuple(poly(t, "[system] sigma") for t in row) for row in s_rows)

    sets_sec = sections.get("sets")
    if sets_sec is None or "safe_h" not in sets_sec or "target_hr" not in sets_sec:
        raise ProblemFormatError("[sets]: 'safe_h' and 'target_hr' are required")
    h = poly(_split_quoted_list(sets_sec["safe_h"], "[sets] safe_h")[0], "[sets] safe_h")
    h_r = poly(
        _split_quoted_list(sets_sec["target_hr"], "[sets] target_hr")[0],
        "[sets] target_hr",
    )
    if "bounding_box" in sets_sec:
        bbox = tuple(_parse_bounding_box(sets_sec["bounding_box"], n, "[sets] bounding_box"))
    else:
        bbox = tuple((-DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH) for _ in range(n))

    inputs_sec = sections.get("inputs", {})
    box: list[Optional[Tuple[float, float]]] = []
    for name in input_names:
        if name.lower() not in inputs_sec:
            raise ProblemFormatError(f"[inputs]: missing bounds for {name!r}")
        value = inputs_sec[name.lower()]
        if value.strip().lower() == "free":
            box.append(None)
        else:
            lo, hi = _parse_interval(value, f"[inputs] {name}")
            if lo > hi:
                raise ProblemFormatError(f"[inputs] {name}: empty interval")
            box.append((lo, hi))

    nominal_sec = sections.get("nominal", {})
    if "k" in nominal_sec:
        k_entries = _split_quoted_list(nominal_sec["k"], "[nominal] k")
        if len(k_entries) != m:
            raise ProblemFormatError(
                f"[nominal] k: expected {m} entries, found {len(k_entries)}"
            )
        k = tuple(poly(t, "[nominal] k") for t in k_entries)
    else:
        k = tuple(Polynomial.zero(n) for _ in range(m))

    template_sec = sections.get("template", {})
    if "degree" in template_sec:
        try:
            degree = int(template_sec["degree"])
        except ValueError as exc:
            raise ProblemFormatError("[template] degree: expected an integer") from exc
    else:
        degree = DEFAULT_TEMPLATE_DEGREE

    system = AffineControlSystem(n=n, m=m, f=f, g=g, sigma=sigma)
    return ReachAvoidProblem(
        system=system,
        h=h,
        h_r=h_r,
        input_box=tuple(box),
        k=k,
        template_degree=degree,
        bounding_box=bbox,
        var_names=var_names,
        input_names=input_names,
    )


def load_problem(path: str | Path) -> ReachAvoidProblem:
    """Load and validate a `.ra` problem file."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_problem_text(text)


# ---------------------------------------------------------------------------
# assumption checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    check: str
    passed: Optional[bool]  # None means "not algorithmically verifiable"
    message: str


def _box_grid(box, resolution: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, resolution) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def validate_assumptions(
    problem: ReachAvoidProblem, resolution: int = 201
) -> list[Diagnostic]:
    """Sampled checks of the standing assumptions on the safe and target sets.

    All checks are heuristic grid evaluations; a passing report is evidence,
    not proof.  "No isolated point" is reported as unverifiable.
    """
    diags: list[Diagnostic] = []
    grid = _box_grid(problem.bounding_box, resolution)
    h_vals = problem.h.evaluate(grid)
    hr_vals = problem.h_r.evaluate(grid)

    inter = np.any((h_vals > 0) & (hr_vals < 0))
    diags.append(
        Diagnostic(
            "nonempty_intersection",
            bool(inter),
            "found a sample with h > 0 and h_r < 0"
            if inter
            else "no sampled point lies in both the safe and target sets",
        )
    )

    # boundedness: on a grid inflated beyond the bounding box, h must be
    # negative everywhere outside the declared box.
    inflated = [
        (lo - 0.5 * (hi - lo), hi + 0.5 * (hi - lo)) for lo, hi in problem.bounding_box
    ]
    big_grid = _box_grid(inflated, resolution)
    inside = np.ones(len(big_grid), dtype=bool)
    for axis, (lo, hi) in enumerate(problem.bounding_box):
        inside &= (big_grid[:, axis] >= lo) & (big_grid[:, axis] <= hi)
    outside_h = problem.h.evaluate(big_grid[~inside])
    bounded = bool(np.all(outside_h < 0)) if len(outside_h) else True
    diags.append(
        Diagnostic(
            "bounded_safe_set",
            bounded,
            "h < 0 at every sampled point outside the bounding box"
            if bounded
            else "found h >= 0 outside the bounding box; enlarge it",
        )
    )

    if problem.is_stochastic:
        target_mask = hr_vals <= 0
        if np.any(target_mask):
            hmax = float(np.max(h_vals[target_mask]))
            ok = hmax <= 1.0 + 1e-9
            diags.append(
                Diagnostic(
                    "h_at_most_one_on_target",
                    ok,
                    f"max sampled h over the target set is {hmax:.6g}"
                    + ("" if ok else " > 1; rescale h"),
                )
            )
        else:
            diags.append(
                Diagnostic(
                    "h_at_most_one_on_target",
                    False,
                    "target set contains no sampled point",
                )
            )

    diags.append(
        Diagnostic(
            "no_isolated_point",
            None,
            "not algorithmically verifiable from samples; review the sets",
        )
    )
    return diags
