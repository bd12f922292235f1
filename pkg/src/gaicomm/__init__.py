"""Multi-task semantic communication with graph attention over encoder blocks."""

from .channel import ChannelConfig, bandwidth_ratio, solve_cds
from .config import ConfigError, RunConfig
from .encoder import EncoderConfig
from .estimator import GAIMultiTaskEstimator, TrainingDivergedError, snr_grid
from .gai import GAIModule, GaiConfig, flop_count_gai
from .heads import TaskSpec
from .metrics import MetricRecord, relative_improvement
from .synth import generate_scene, make_dataset

__all__ = [
    "ChannelConfig",
    "ConfigError",
    "EncoderConfig",
    "GAIModule",
    "GAIMultiTaskEstimator",
    "GaiConfig",
    "MetricRecord",
    "RunConfig",
    "TaskSpec",
    "TrainingDivergedError",
    "bandwidth_ratio",
    "flop_count_gai",
    "generate_scene",
    "make_dataset",
    "relative_improvement",
    "snr_grid",
    "solve_cds",
]
