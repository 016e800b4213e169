"""Numerical laboratory for zero-diffusivity limits of periodic transport.

Three solution mechanisms side by side on the flat torus: spectral
advection-diffusion solves, deterministic particle flows, and Monte Carlo
stochastic flows whose expectations realise the same solutions.  A sweep
harness measures convergence rates, flow stability, energy budgets, and
duality identities across diffusivity ladders.
"""

__version__ = "0.1.0"

from .errors import BudgetError, ConfigError, ContractViolation, NumericalAbort
from .torus import (
    GridSpec,
    ScalarField,
    TorusPoint,
    geodesic_distance,
    grid_norm,
    l1_field_distance,
    wrap,
)
from .fields import FieldSpec, VelocityField, catalogue_names, make_field
from .flows import FlowMap, ParticleCloud, integrate_flow, lagrangian_solution
from .stochastic import EnsembleFlowMap, NoiseSpec, feynman_kac_solution
from .spectral import dual_solve, energy_identity_residual, solve_ade
from .config import ExperimentRecord, SweepConfig, parse_config

__all__ = [
    "BudgetError",
    "ConfigError",
    "ContractViolation",
    "EnsembleFlowMap",
    "ExperimentRecord",
    "FieldSpec",
    "FlowMap",
    "GridSpec",
    "NoiseSpec",
    "NumericalAbort",
    "ParticleCloud",
    "ScalarField",
    "SweepConfig",
    "TorusPoint",
    "VelocityField",
    "catalogue_names",
    "dual_solve",
    "energy_identity_residual",
    "feynman_kac_solution",
    "geodesic_distance",
    "grid_norm",
    "integrate_flow",
    "l1_field_distance",
    "lagrangian_solution",
    "make_field",
    "parse_config",
    "solve_ade",
    "wrap",
    "__version__",
]
