"""Ground states, linearized spectra and radial dynamics for NLS with an
inverse-square potential.

    -Δu + a/|x|² u + u - |u|^p u = 0,   x ∈ R^d,  -((d-2)/2)² < a < 0.
"""

from .groundstate import GroundStateProfile, gn_check, load_profile, save_profile, solve_ground_state
from .nls_sim import RunConfig, RunResult, build_model, discrete_profile, evolve
from .ode import OdeState, Params, ParamsError, Trajectory, energy_H, pohozaev, rhs
from .shooting import BracketError, bisect_ground_state, classify, scan_bracket, shoot
from .spectral import SpectrumReport, dichotomy_eigenpair, spectrum_report

__all__ = [
    "BracketError",
    "GroundStateProfile",
    "OdeState",
    "Params",
    "ParamsError",
    "RunConfig",
    "RunResult",
    "SpectrumReport",
    "Trajectory",
    "bisect_ground_state",
    "build_model",
    "classify",
    "dichotomy_eigenpair",
    "discrete_profile",
    "energy_H",
    "evolve",
    "gn_check",
    "load_profile",
    "pohozaev",
    "rhs",
    "save_profile",
    "scan_bracket",
    "shoot",
    "solve_ground_state",
    "spectrum_report",
]

__version__ = "0.1.0"
