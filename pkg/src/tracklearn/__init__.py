"""Path-following steering control: vehicle models, error-frame environment, SAC and evaluation."""

__version__ = "0.1.0"

from .env import OBS_CHANNELS, DoneReason, EpisodeConfig, TrackingEnv, reward
from .errors import ConfigError, DomainError, LoadError, TrackLearnError, UsageError
from .geometry import PathBuffer, Pose2, SourceTag, closest_next_point, error_state, wrap_angle
from .vehicle import NOMINAL_PARAMS, ModelTier, VehicleParams, VehicleState

__all__ = [
    "ConfigError", "DomainError", "DoneReason", "EpisodeConfig", "LoadError", "ModelTier", "NOMINAL_PARAMS",
    "OBS_CHANNELS", "PathBuffer", "Pose2", "SourceTag", "TrackLearnError", "TrackingEnv", "UsageError",
    "VehicleParams", "VehicleState", "closest_next_point", "error_state", "reward", "wrap_angle",
]
