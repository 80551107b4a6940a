"""Tails of randomly stopped sums and maxima under heavy-tailed increments.

Exact lattice computation, closed-form hazard arithmetic, class diagnostics,
counterexample constructions, and seeded Monte Carlo, wired together by a
scenario-driven CLI (``python -m stopsum``).
"""

from .dist import (
    Distribution,
    Exponential,
    HazardDistribution,
    LatticeDistribution,
    LogNormal,
    Pareto,
    ShiftedDistribution,
    Weibull,
    discretize,
    hazard_approximation,
    make_stream,
    parse_spec,
)
from .errors import (
    DivergenceError,
    InapplicableError,
    InvalidEstimateError,
    ResourceBudgetError,
    ValidationError,
)

__version__ = "0.1.0"
