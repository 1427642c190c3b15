"""Hierarchy solver for open quantum dynamics with bosonic baths."""
from .bath import (BathThermalState, BrownianOscillator, DiscreteModes, DrudeLorentz,
                   OhmicExponential, correlation_function, discretize_bath,
                   spectral_density_value)
from .decomp import (BathDecomposition, DecompositionReport, discrete_to_decomposition,
                     matsubara_decomposition, pade_decomposition, pairing_map, prony_fit)
from .dynamics import ODOState, SystemSpec, initial_state
from .hierarchy import OUTSIDE, HierarchySpace, enumerate_hierarchy
from .propagator import PropagationConfig, Trajectory, propagate

__all__ = [
    "BathThermalState", "BrownianOscillator", "DiscreteModes", "DrudeLorentz", "OhmicExponential",
    "correlation_function", "discretize_bath", "spectral_density_value",
    "BathDecomposition", "DecompositionReport", "discrete_to_decomposition",
    "matsubara_decomposition", "pade_decomposition", "pairing_map", "prony_fit",
    "ODOState", "SystemSpec", "initial_state",
    "OUTSIDE", "HierarchySpace", "enumerate_hierarchy",
    "PropagationConfig", "Trajectory", "propagate",
]
