"""Path generation and the two-phase training curriculum."""

from .paths import PathGenSpec, Scenario, ScenarioSet, generate_virtual_paths, load_scenarios, write_scenarios
from .training import (DRConfig, TrainConfig, TrainLog, Trainer, evaluate_snapshot, plateau_detect,
                       run_curriculum)

__all__ = [
    "DRConfig", "PathGenSpec", "Scenario", "ScenarioSet", "TrainConfig", "TrainLog", "Trainer",
    "evaluate_snapshot", "generate_virtual_paths", "load_scenarios", "plateau_detect", "run_curriculum",
    "write_scenarios",
]
