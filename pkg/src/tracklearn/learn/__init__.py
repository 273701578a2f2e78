from .nn import Adam, Mlp, adam_step
from .replay import Batch, ReplayBuffer
from .sac import LossReport, SacAgent, SacConfig, load_checkpoint, save_checkpoint
from .schedule import lr_schedule

__all__ = [
    "Adam", "Batch", "LossReport", "Mlp", "ReplayBuffer", "SacAgent", "SacConfig", "adam_step",
    "load_checkpoint", "lr_schedule", "save_checkpoint",
]
