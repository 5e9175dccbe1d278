"""Mean-field optimal execution engine with a regime-switching price signal."""

__version__ = "0.1.0"

from .model import (EngineError, FilterError, GameSpec, LatentMarketModel,
                    PopulationSpec, SolverError, SubPopulationSpec, TimeGrid,
                    ValidationError, empirical_proportions, validate)
from .config import (ConfigError, ScenarioConfig, emit_config, parse_config,
                     parse_config_string)
from .runner import run_scenario

__all__ = [
    "ConfigError", "EngineError", "FilterError", "GameSpec",
    "LatentMarketModel", "PopulationSpec", "ScenarioConfig", "SolverError",
    "SubPopulationSpec", "TimeGrid", "ValidationError", "emit_config",
    "empirical_proportions", "parse_config", "parse_config_string",
    "run_scenario", "validate", "__version__",
]
