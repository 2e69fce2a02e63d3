"""Pulse-envelope synthesis and evaluation for population transfer
between two bound states coupled through an ionization continuum.

The package covers the delayed-Gaussian and sin-cos reference protocols,
an exact-discrete-adjoint pulse optimizer under box constraints, and a
reproducible experiment harness (duration/incoherence/Fano sweeps,
saturation limits, smoothing, distortion robustness) with a CLI front
end.
"""

__version__ = "0.1.0"

from .model import (
    ControlGrid,
    DetuningMode,
    StateVector,
    SystemConfig,
    effective_detuning,
    gaussian_grid,
    gaussian_grid_for_duration,
    gaussian_pair,
    gaussian_window,
    sample_onto_grid,
    sincos_controls,
    sincos_grid,
)
from .propagator import (
    NonFiniteStateError,
    PropagationResult,
    adiabatic_transform,
    dark_state,
    efficiency_of,
    propagate,
    sincos_efficiency_analytic,
)
from .optimizer import (
    OptimizationReport,
    Segment,
    detect_structure,
    gradient,
    optimize,
    standard_starts,
)
from .experiments import (
    GaussianBaseline,
    SaturationResult,
    SweepResult,
    benchmark_table,
    fano_sweep,
    gaussian_baseline_search,
    optimal_duration_sweep,
    r_sweep,
    robustness_scan,
    saturation_limit,
    sincos_sweep,
    smooth_controls,
)

__all__ = [
    "__version__",
    "ControlGrid",
    "DetuningMode",
    "GaussianBaseline",
    "NonFiniteStateError",
    "OptimizationReport",
    "PropagationResult",
    "SaturationResult",
    "Segment",
    "StateVector",
    "SweepResult",
    "SystemConfig",
    "adiabatic_transform",
    "benchmark_table",
    "dark_state",
    "detect_structure",
    "effective_detuning",
    "efficiency_of",
    "fano_sweep",
    "gaussian_baseline_search",
    "gaussian_grid",
    "gaussian_grid_for_duration",
    "gaussian_pair",
    "gaussian_window",
    "gradient",
    "optimal_duration_sweep",
    "optimize",
    "propagate",
    "r_sweep",
    "robustness_scan",
    "sample_onto_grid",
    "saturation_limit",
    "sincos_controls",
    "sincos_efficiency_analytic",
    "sincos_grid",
    "sincos_sweep",
    "smooth_controls",
    "standard_starts",
]
