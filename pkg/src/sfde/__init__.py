"""Numerical laboratory for stochastic delay reaction-diffusion equations.

Spectral (bounded interval) and Gaussian-kernel (weighted whole line)
discretizations of mild solutions with delayed nonlinearities, pathwise
Picard and successive-approximation solvers, and Monte Carlo checks of
moment bounds, invariant measures and exponential attractivity.
"""

__version__ = "0.1.0"

from .spectral_domain import (  # noqa: E402
    DelaySegment,
    DomainKind,
    DomainSpec,
    EigenBasis,
    Field,
    FullState,
    build_basis,
    norm_b,
    norm_b0,
    norm_b1,
)
from .stochastic_driver import QWienerSpec, RngStream  # noqa: E402
from .delay_dynamics import (  # noqa: E402
    ModelSpec,
    NonlinearityKind,
    NonlinearitySpec,
    constant_history,
    run_ensemble,
    run_trajectory,
    step,
)
from .fixedpoint_solvers import smallness_check  # noqa: E402

__all__ = [
    "DelaySegment", "DomainKind", "DomainSpec", "EigenBasis", "Field", "FullState", "build_basis",
    "norm_b", "norm_b0", "norm_b1", "QWienerSpec", "RngStream", "ModelSpec", "NonlinearityKind",
    "NonlinearitySpec", "constant_history", "run_ensemble", "run_trajectory", "step", "smallness_check",
]
