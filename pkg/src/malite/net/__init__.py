from .estimator import MaliteMNClassifier, images_to_tensor
from .model import (
    DEFAULT_BLOCKS,
    BottleneckSpec,
    MaliteMN,
    NetConfig,
    build_malite_mn,
)
from .ops import count_mults
from .train import TrainConfig, TrainState, lr_at, train_step

__all__ = [
    "DEFAULT_BLOCKS",
    "BottleneckSpec",
    "MaliteMN",
    "MaliteMNClassifier",
    "NetConfig",
    "TrainConfig",
    "TrainState",
    "build_malite_mn",
    "count_mults",
    "images_to_tensor",
    "lr_at",
    "train_step",
]
