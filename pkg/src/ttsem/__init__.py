"""Tensor-train and quantized tensor-train solvers for space-time Q1
spectral-element discretizations of convection-diffusion-reaction problems."""

__version__ = "0.1.0"

from .exceptions import CapacityError, InputError, ShapeMismatchError, SingularMatrixError, SolverError
from .tt import (
    TTMatrix,
    TTVector,
    restrict_modes,
    tt_axpy,
    tt_diag,
    tt_dot,
    tt_from_dense,
    tt_hadamard,
    tt_norm,
    tt_round,
    tt_to_dense,
    ttmat_apply,
    ttmat_from_factors,
)
from .quantize import compression_ratio, dequantize, factor_mode, quantize
from .cross import cross_interpolate, cross_on_grid
from .solve import SolverOptions, SolveStats, als_solve, newton_solve, tt_residual_norm
from .sem import Grid, build_boundary_term_tt, build_load_tt, build_operator_tt, local_matrices
from .problems import ProblemSpec, get_problem
from .driver import RunOptions, SolveReport, compute_l2_error, convergence_study, rank_study, run_experiment
