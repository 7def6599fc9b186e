"""Quench phase shift simulation and analysis for a spin-1 probe in a nuclear spin bath."""

__version__ = "0.1.0"

from .bath import (
    BathConfig,
    BathSpin,
    FieldParams,
    couplings_from_geometry,
    epsilon,
    gaussian_validity_horizon,
    load_config,
    weighted_axial_polarization,
)

__all__ = [
    "BathConfig",
    "BathSpin",
    "FieldParams",
    "couplings_from_geometry",
    "epsilon",
    "gaussian_validity_horizon",
    "load_config",
    "weighted_axial_polarization",
    "__version__",
]
