"""Generative latent-space driving planner.

Tokenizes procedurally generated driving scenes with attention, learns a
latent trajectory prior and rolls latents forward to produce the ego plan
and agent predictions together.
"""

from .protocol import TrajectoryDecoder
from .factory import build_decoder
from .scenes import Scene, SceneGenConfig, generate_scene, generate_scenes
from .dataset import dataset_read, dataset_write
from .model import LatentPlanner, ModelConfig, Variant, build_model
from .losses import LossWeights
from .training import TrainConfig, checkpoint_load, checkpoint_save, fit
from .metrics import MetricMode, MetricsReport, evaluate, evaluate_baseline
from .ablation import run_ablation
from .config import RunConfig, load_run_config

__all__ = [
    "TrajectoryDecoder",
    "build_decoder",
    "Scene",
    "SceneGenConfig",
    "generate_scene",
    "generate_scenes",
    "dataset_read",
    "dataset_write",
    "LatentPlanner",
    "ModelConfig",
    "Variant",
    "build_model",
    "LossWeights",
    "TrainConfig",
    "checkpoint_load",
    "checkpoint_save",
    "fit",
    "MetricMode",
    "MetricsReport",
    "evaluate",
    "evaluate_baseline",
    "run_ablation",
    "RunConfig",
    "load_run_config",
]
