"""Mean-field Bose dynamics with a pair-excitation correction.

Core layers: grid/kernel algebra (:mod:`pairdyn.grids`), matrix-function
calculus (:mod:`pairdyn.kernelcalc`), the mean-field solver and its
monitors (:mod:`pairdyn.hartree`), the pair-kernel evolution
(:mod:`pairdyn.pairexc`), the truncated Fock-space oracle
(:mod:`pairdyn.fock`), and a configuration-driven runner
(:mod:`pairdyn.cli`).
"""

__version__ = "0.1.0"

from .grids import (
    Field,
    Grid,
    GridMismatchError,
    Kernel,
    NumericalBlowupError,
    Potential,
    adjoint,
    conjugate,
    hs_norm,
    identity_kernel,
    inner_product,
    kernel_apply,
    kernel_compose,
    kernel_trace,
    operator_norm,
    transpose,
    zero_kernel,
)
from .kernelcalc import (
    PairKernelSet,
    ch_series,
    inverse_sh,
    resolvent_transform,
    sh_series,
    sqrt_one_plus_contour,
    sqrt_one_plus_spectral,
)
from .hartree import (
    ConformalSet,
    DensitySet,
    HartreeState,
    conformal_energy_moments,
    conformal_quantities,
    conserved_quantities,
    convolve_potential,
    decay_norms,
    densities,
    gaussian_packet,
    hartree_step,
)
from .pairexc import (
    CoefficientSet,
    PairState,
    PairTrajectory,
    build_coefficients,
    gronwall_monitor,
    identity_residuals,
    pair_rhs,
    pair_step,
    run_pair_trajectory,
)
from .fock import (
    FockBasis,
    FockOperator,
    FockVector,
    build_ladder,
    build_quadratic,
    coherent_state,
    conjugation_check,
    cubic_error_closed_form,
    cubic_error_oracle,
    error_functionals,
    exp_B,
    lie_checks,
    metaplectic,
    n_scaling_study,
    phase_min_distance,
    quadrature_basis_change,
)
