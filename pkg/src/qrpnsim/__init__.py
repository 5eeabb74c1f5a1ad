"""Noise budget simulator for a detuned optomechanical cavity with squeezed-light injection."""
from .model import (
    ConfigError,
    FrequencyGrid,
    SystemConfig,
    ValidatedSystem,
    db_to_power_ratio,
    load_config,
    paper_system,
    power_ratio_to_db,
    validate_config,
)

__all__ = [
    "ConfigError",
    "FrequencyGrid",
    "SystemConfig",
    "ValidatedSystem",
    "db_to_power_ratio",
    "load_config",
    "paper_system",
    "power_ratio_to_db",
    "validate_config",
]

__version__ = "0.1.0"
