"""Learned state-reaching controllers as an action space for movement optimization."""

from .errors import ConfigError, SimulationDiverged, TrainingError, UsageError

__version__ = "0.1.0"

__all__ = ["ConfigError", "SimulationDiverged", "TrainingError", "UsageError", "__version__"]
