"""Spectral simulation and control of BBM-type equations on the torus."""

from .dynamics import (
    BlowUpError,
    TaylorSeries,
    Trajectory,
    energy_ledger_residual,
    integrate,
    invariants,
    moving_frame,
    rhs_mild,
    taylor_flow,
    time_reflect,
)
from .feedback import (
    DegenerateFit,
    LedgerError,
    apply_B,
    bstar_s,
    closed_loop_params,
    closed_loop_run,
    damped_generator,
    damped_group,
    damped_group_trajectory,
    decay_rate_fit,
    observability_ratio,
)
from .kernels import BACKEND
from .moment import (
    ConditioningError,
    ControlSignal,
    DegenerateDamping,
    MomentSystem,
    NoContraction,
    SingularCluster,
    eigenfrequencies,
    gram_exponentials,
    linear_drive,
    moment_data,
    moment_system,
    nonlinear_steer,
    phi_operator,
    solve_moments,
)
from .spectral import (
    HermitianError,
    LinearSymbol,
    ModelParams,
    SpectralField,
    apply_A,
    apply_helmholtz_inv,
    free_flow,
    group_symbol,
    hs_norm,
    torus_convolution,
)

__version__ = "0.1.0"
