"""Conversation group detection and forecasting toolkit."""

from .scene import (
    AffinityMatrix,
    GroupPartition,
    PersonState,
    SceneSequence,
    load_scene_sequences,
    save_scene_sequences,
)
from .features import FeatureScaler, FeatureTensor, PresenceMask, build_features, circular_mean
from .affinity import ModelParams, WindowBatch, forward, forward_batch, grad_check, mse_loss
from .dominant_sets import DSConfig, Symmetrization, cluster, extract_dominant_set, symmetrize
from .metrics import DynamicsScore, GroupMatchConfig, auc, group_f1, scene_dynamics
from .forecast import EdgeSeries, GPRModel, fit_edge_gpr, forecast_groups, sample_posterior
from .synth import SynthConfig, generate
from .training import TrainConfig, train

__all__ = [
    "AffinityMatrix", "GroupPartition", "PersonState", "SceneSequence",
    "load_scene_sequences", "save_scene_sequences",
    "FeatureScaler", "FeatureTensor", "PresenceMask", "build_features", "circular_mean",
    "ModelParams", "WindowBatch", "forward", "forward_batch", "grad_check", "mse_loss",
    "DSConfig", "Symmetrization", "cluster", "extract_dominant_set", "symmetrize",
    "DynamicsScore", "GroupMatchConfig", "auc", "group_f1", "scene_dynamics",
    "EdgeSeries", "GPRModel", "fit_edge_gpr", "forecast_groups", "sample_posterior",
    "SynthConfig", "generate",
    "TrainConfig", "train",
]

__version__ = "0.1.0"
