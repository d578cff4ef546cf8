"""History-aware imitation-learning trajectory planner with a reactive
closed-loop simulator, trainable and runnable at desk scale on synthetic
scenarios."""

from .decoder import PlanResult, PlanningEmbedding
from .features import FeatureBundle, FeatureParams, to_ego_frame
from .generate import KINDS, generate_scenario
from .history import FusionConfig, HistoryPool
from .losses import ComfortLimits, comfort_loss, dynamic_profile, imitation_loss, project_target
from .model import LHPFModel, ModelConfig, infer, load_checkpoint, save_checkpoint
from .scenario import ObservationWindow, ScenarioWorld, slice_window
from .simulation import IDMParams, SimReport, run_episode

__all__ = [
    "ComfortLimits",
    "FeatureBundle",
    "FeatureParams",
    "FusionConfig",
    "HistoryPool",
    "IDMParams",
    "KINDS",
    "LHPFModel",
    "ModelConfig",
    "ObservationWindow",
    "PlanResult",
    "PlanningEmbedding",
    "ScenarioWorld",
    "SimReport",
    "comfort_loss",
    "dynamic_profile",
    "generate_scenario",
    "imitation_loss",
    "infer",
    "load_checkpoint",
    "project_target",
    "run_episode",
    "save_checkpoint",
    "slice_window",
    "to_ego_frame",
]

__version__ = "0.1.0"
