"""Lightweight byteplot malware classification: histogram + forest and a small CNN."""

from .byteplot import ByteImage, ByteplotTransformer, resize_square, to_gray_image, to_rgb_image
from .featurizer import PatchHistogramFeaturizer, PatchSpec, featurize
from .forest import RandomForestClassifier
from .hrf import MaliteHRFClassifier
from .net import MaliteMNClassifier, NetConfig

__version__ = "0.1.0"

__all__ = [
    "ByteImage",
    "ByteplotTransformer",
    "MaliteHRFClassifier",
    "MaliteMNClassifier",
    "NetConfig",
    "PatchHistogramFeaturizer",
    "PatchSpec",
    "RandomForestClassifier",
    "featurize",
    "resize_square",
    "to_gray_image",
    "to_rgb_image",
]
