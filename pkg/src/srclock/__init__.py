"""Stochastic mean-field simulation of a continuously monitored superradiant clock.

Typical use::

    from srclock import preset, integrate, analyze_record
    cfg = preset("fig3_two_ensembles")
    rec = integrate(cfg, seed=7)
    print(analyze_record(rec, cfg).peaks)
"""

from .config import SimulationConfig, from_dict, load
from .detection import RNG_ALGORITHM, TrajectoryRecord
from .engine import integrate
from .errors import (ConfigError, FitError, InsufficientDataError, IntegrationDiverged,
                     PairingError, SrclockError)
from .experiment import analyze_record, run_batch, run_sweep
from .presets import PRESETS, preset

__version__ = "0.1.0"

__all__ = [
    "SimulationConfig", "from_dict", "load", "RNG_ALGORITHM", "TrajectoryRecord", "integrate",
    "ConfigError", "FitError", "InsufficientDataError", "IntegrationDiverged", "PairingError",
    "SrclockError", "analyze_record", "run_batch", "run_sweep", "PRESETS", "preset",
    "__version__",
]
