"""Configuration, scenarios, persistence and experiment drivers."""
from .checkpoint import dumps_checkpoint, load_checkpoint, loads_checkpoint, save_checkpoint
from .config import InitialData, ScenarioConfig, config_from_dict, load_config, loads_config
from .runner import RunReport, SweepReport, read_csv, resume, run_scenario, sweep
from .scenarios import PRESETS, initial_state

__all__ = [
    "InitialData",
    "PRESETS",
    "RunReport",
    "ScenarioConfig",
    "SweepReport",
    "config_from_dict",
    "dumps_checkpoint",
    "initial_state",
    "load_checkpoint",
    "load_config",
    "loads_checkpoint",
    "loads_config",
    "read_csv",
    "resume",
    "run_scenario",
    "save_checkpoint",
    "sweep",
]
