"""Dual-stage frequency-aware pose refinement: network, loss, training,
inference, baselines, and the model file format."""

from .baselines import BASELINE_KINDS, baseline_filters
from .estimators import (
    KalmanSmoother,
    MedianSmoother,
    MovingAverageSmoother,
    PoseRefiner,
)
from .infer import DEFAULT_WINDOW, refine
from .loss import LossWeights, composite_loss, composite_loss_with_grad
from .model_file import load_model, save_model
from .network import (
    RefinerArchitecture,
    RefinerModel,
    build_fusion,
    refiner_backward,
    refiner_forward,
    stage1_forward,
    stage2_forward,
)
from .training import (
    AdamW,
    EpochLog,
    PairGeneratorConfig,
    SyntheticPairStream,
    TrainConfig,
    cosine_lr,
    loss_and_gradients,
    train,
    write_training_log,
)

__all__ = [
    "AdamW",
    "BASELINE_KINDS",
    "DEFAULT_WINDOW",
    "EpochLog",
    "KalmanSmoother",
    "LossWeights",
    "MedianSmoother",
    "MovingAverageSmoother",
    "PairGeneratorConfig",
    "PoseRefiner",
    "RefinerArchitecture",
    "RefinerModel",
    "SyntheticPairStream",
    "TrainConfig",
    "baseline_filters",
    "build_fusion",
    "composite_loss",
    "composite_loss_with_grad",
    "cosine_lr",
    "load_model",
    "loss_and_gradients",
    "refine",
    "refiner_backward",
    "refiner_forward",
    "save_model",
    "stage1_forward",
    "stage2_forward",
    "train",
    "write_training_log",
]
