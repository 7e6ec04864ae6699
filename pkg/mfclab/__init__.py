"""
MFC Lab

Simulation and verification of extended mean-field control problems with
common noise: empirical measures and Wasserstein distances, particle engines,
policy optimization, Fokker-Planck residual checks and mollified coefficients.
"""

__version__ = "0.3.0"

from .measures import DiscreteMeasure, MeasurePath, RelaxedControlPath, CommonNoisePath, wasserstein
from .problem import ControlSet, ProblemSpec, builtin_problems, lookup
from .particle import SimConfig, InitialLaw, simulate_mkv, simulate_n_agent
