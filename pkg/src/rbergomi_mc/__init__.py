"""Monte Carlo pricing under the rough Bergomi model with hybrid-scheme
Volterra simulation and variance-reduced implied volatility estimators."""

__version__ = "0.1.0"

from .black_scholes import bs_price, implied_total_variance, implied_vol
from .engine import ForwardVariance, ModelParams, PathFunctionals, simulate_functionals
from .estimators import EstimatorKind, ImpliedVolEstimate, estimate_implied_vol
from .hybrid import TimeGrid, VolterraPaths, simulate_volterra
from .lab import (
    REFERENCE_SMILE,
    calibrate_rho_eta,
    extract_forward_variance,
    generate_smile,
    repeated_estimation,
)

__all__ = [
    "__version__",
    "bs_price",
    "implied_total_variance",
    "implied_vol",
    "ForwardVariance",
    "ModelParams",
    "PathFunctionals",
    "simulate_functionals",
    "EstimatorKind",
    "ImpliedVolEstimate",
    "estimate_implied_vol",
    "TimeGrid",
    "VolterraPaths",
    "simulate_volterra",
    "REFERENCE_SMILE",
    "calibrate_rho_eta",
    "extract_forward_variance",
    "generate_smile",
    "repeated_estimation",
]
