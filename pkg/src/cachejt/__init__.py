"""Successful transmission probability of cache-enabled cellular networks with
local-CSI joint transmission: closed-form approximation, Monte Carlo
simulation and content-placement optimization."""

from .analytic import build_interpolant, coop_terms, q_n0, q_n_a, r_m1, r_m2, stp_a
from .model import (
    ContentCatalog,
    NetworkParams,
    PlacementVector,
    StpResult,
    validate_placement,
    zipf_popularity,
)
from .numerics import QuadratureSpec, gauss_fg, integrate_1d, integrate_hypercube, interference_slope
from .placement import (
    OptimizerConfig,
    baseline_iidc,
    baseline_mpc,
    baseline_udc,
    optimize_placement,
    project_capped_simplex,
)
from .simulator import SimConfig, estimate_stp, estimate_stp_sweep, sample_cache, simulate_realization

__version__ = "0.1.0"

__all__ = [
    "ContentCatalog",
    "NetworkParams",
    "OptimizerConfig",
    "PlacementVector",
    "QuadratureSpec",
    "SimConfig",
    "StpResult",
    "baseline_iidc",
    "baseline_mpc",
    "baseline_udc",
    "build_interpolant",
    "coop_terms",
    "estimate_stp",
    "estimate_stp_sweep",
    "gauss_fg",
    "integrate_1d",
    "integrate_hypercube",
    "interference_slope",
    "optimize_placement",
    "project_capped_simplex",
    "q_n0",
    "q_n_a",
    "r_m1",
    "r_m2",
    "sample_cache",
    "simulate_realization",
    "stp_a",
    "validate_placement",
    "zipf_popularity",
]
