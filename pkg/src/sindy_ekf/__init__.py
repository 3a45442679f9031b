"""Online adaptation of sparse (SINDy) dynamical models with an extended Kalman filter."""
from .ekf import (AugmentedBelief, FilterConfig, FilterDivergence, FilterRun, ObservationSet,
                  assimilate, correct, predict)
from .library import (CosineForcing, FeatureLibrary, Monomial, build_polynomial_library,
                      library_from_descriptor)
from .model import AdaptivityMask, SindyModel
from .config import load_scenario_config, write_scenario_config
from .scenarios import Scenario, builtin_scenario, frc_sweep, make_observations, simulate_truth
from .training import (SnapshotSet, StlsqSettings, assemble_regression, compress_regression,
                       differentiate_snapshots, stlsq)

__all__ = [
    "AdaptivityMask", "AugmentedBelief", "CosineForcing", "FeatureLibrary", "FilterConfig",
    "FilterDivergence", "FilterRun", "Monomial", "ObservationSet", "Scenario", "SindyModel",
    "SnapshotSet", "StlsqSettings", "assemble_regression", "assimilate", "build_polynomial_library",
    "compress_regression", "load_scenario_config", "write_scenario_config",
    "builtin_scenario", "correct", "differentiate_snapshots", "frc_sweep",
    "library_from_descriptor", "make_observations", "predict", "simulate_truth", "stlsq",
]
__version__ = "0.1.0"
