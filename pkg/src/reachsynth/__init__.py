"""Reach-avoid controller synthesis for polynomial control-affine systems.

The package synthesizes feedback controllers that drive every trajectory of
an ODE (or, with probability bounds, an SDE) into a target set while the
trajectory stays inside a safe set, by solving sum-of-squares relaxations of
guidance-barrier conditions with an embedded interior-point SDP solver.
"""

__version__ = "0.1.0"

from .polycore import Polynomial, monomial_basis
from .problem import (
    AffineControlSystem,
    ControllerTemplate,
    ReachAvoidProblem,
    load_problem,
    parse_polynomial,
    validate_assumptions,
)
from .synthesis import SynthesisOptions, SynthesisResult, synthesize

__all__ = [
    "Polynomial",
    "monomial_basis",
    "AffineControlSystem",
    "ControllerTemplate",
    "ReachAvoidProblem",
    "load_problem",
    "parse_polynomial",
    "validate_assumptions",
    "SynthesisOptions",
    "SynthesisResult",
    "synthesize",
    "__version__",
]
