"""Second-order Esscher pricing engine.

Calibrates two-parameter Esscher martingale tilts for one-dimensional
jump-diffusion and compound-Poisson models, verifies the density processes
pathwise, and computes the stochastic pricing-interval bounds through a
monotone family of lattice BSDEs.
"""

from .market_model import (
    CompoundPoissonModel,
    JumpLaw,
    MarketModel,
    Segment,
    TildeParams,
    derive_tilde,
    load_model,
    validate,
)
from .esscher_solver import (
    EsscherClass,
    EsscherSpec,
    RootConfig,
    eta,
    eta_star,
    kappa_exponential,
    kappa_linear,
    theta_root_cp_exponential,
    theta_root_cp_linear,
)
from .bsde_bounds import Claim, bounds, interval_sandwich, solve_n, solve_psi
from .lattice import build as build_lattice
from .path_engine import density_path, price_mc, simulate

__all__ = [
    "CompoundPoissonModel",
    "JumpLaw",
    "MarketModel",
    "Segment",
    "TildeParams",
    "derive_tilde",
    "load_model",
    "validate",
    "EsscherClass",
    "EsscherSpec",
    "RootConfig",
    "eta",
    "eta_star",
    "kappa_exponential",
    "kappa_linear",
    "theta_root_cp_exponential",
    "theta_root_cp_linear",
    "Claim",
    "bounds",
    "interval_sandwich",
    "solve_n",
    "solve_psi",
    "build_lattice",
    "density_path",
    "price_mc",
    "simulate",
]

__version__ = "0.1.0"
