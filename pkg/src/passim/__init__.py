"""Correlation-based passive imaging.

Forward covariance modeling through parametric elliptic PDEs, the extended
adjoint state and its covariance backpropagator, Landweber reconstruction,
and empirical nonlinearity diagnostics.
"""

__version__ = "0.1.0"

from .adjoint import (
    ExtendedAdjointState,
    RieszMap,
    apply_riesz,
    backprop,
    backprop_abc,
    backprop_bihelmholtz,
    backprop_bihelmholtz_theta,
    backprop_direct_reference,
    ensemble_factors,
    extended_adjoint_lowrank,
    extended_adjoint_slicewise,
    full_measurement_adjoint,
    hermitian_factors,
)
from .derivative import (
    TccScanReport,
    gradient_of_misfit,
    jacobian_apply,
    jacobian_factors,
    linearization_error,
    linearized_states,
    misfit,
    tcc_scan,
)
from .forward import ForwardProblem, data_norm, fd_jacobian_singular_values, forward, residual, states
from .grid import (
    Field,
    Grid,
    GridMismatchError,
    apply_divergence,
    apply_gradient,
    apply_laplacian,
    field_norm,
    inner_product,
    real_inner_product,
)
from .io import load_field, load_kernel, save_field, save_kernel
from .model import (
    AbcDirection,
    AbcParams,
    AdmissibilityError,
    BiHelmholtzParam,
    InvertibilityError,
    OperatorHandle,
    apply_B,
    apply_B_adjoint,
    apply_operator,
    assemble,
    assemble_abc,
    assemble_abc_adjoint,
    assemble_abc_adjoint_continuous,
    assemble_adjoint,
    assemble_bihelmholtz,
    assemble_bihelmholtz_adjoint,
    direction_dot,
    direction_norm,
    solve,
)
from .reconstruct import (
    IterationTrace,
    LandweberConfig,
    estimate_step,
    landweber,
    make_noisy_data,
)
from .stochastic import (
    CovKernel,
    SourceCovariance,
    SourceEnsemble,
    covariance_pushforward,
    cross_covariance,
    make_se_covariance,
    make_white_covariance,
    sample_covariance,
    sample_ensemble,
)
