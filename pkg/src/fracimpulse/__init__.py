"""Linear Caputo-fractional evolution equations with impulses.

Simulation, adjoint duality, controllability Gramians and regularized
steering for finite-dimensional (spectrally truncated) models.
"""

from __future__ import annotations

from fracimpulse.controllability import (
    KernelTest,
    SweepReport,
    SynthesisResult,
    epsilon_sweep,
    free_final,
    kernel_test,
    objective_value,
    rank_condition,
    synthesize,
    verify_terminal_identity,
)
from fracimpulse.errors import (
    ContractError,
    DomainError,
    NumericalError,
    UnsupportedConfigurationError,
    ValidationError,
)
from fracimpulse.gramian import GramianBundle, apply_M, apply_M_star, assemble_gramian
from fracimpulse.propagator import (
    AdjointTrajectory,
    Trajectory,
    adjoint_solve,
    green_residual,
    post_impulse_state,
    propagate,
    propagate_commutative,
)
from fracimpulse.solops import OperatorCache, p_alpha, s_alpha, singular_convolve
from fracimpulse.specfun import (
    MLParams,
    WrightParams,
    gamma,
    mittag_leffler,
    mittag_leffler_matrix,
    wright,
)
from fracimpulse.sysmodel import (
    ControlBundle,
    FractionalOrder,
    ImpulseEvent,
    SystemSpec,
    heat_demo_spec,
    inner_product_omega,
    make_grid,
    validate,
    zero_bundle,
)

__version__ = "0.1.0"
