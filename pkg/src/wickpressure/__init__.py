"""Numerics for the Wick-renormalized stochastic pressure equation on the torus."""

from .torus import TorusGrid, GridField, SpectralField, forward_transform, inverse_transform
from .log_field import FieldSpec, truncated_covariance, sample_field, sample_fields
from .gmc import gmc_realization, wick_exponential, second_moment_predict
from .g_operator import kernel_coefficients, verify_decay, apply_G, invert_G, project_between_chaoses
from .weighted_solver import build_weight, assemble_operator, assemble_rhs, solve_pde, green_function
from .family import reference_flux, solve_family, z_interpolate, invert_in_z, s_transform_mc

__version__ = "0.1.0"
