from .container import load_model, load_model_file, save_model, save_model_file
from .metrics import Metrics, compute_metrics, format_metrics
from .sweep import SweepGrid, point_seed, sweep_csv, sweep_hrf

__all__ = [
    "Metrics",
    "SweepGrid",
    "compute_metrics",
    "format_metrics",
    "load_model",
    "load_model_file",
    "point_seed",
    "save_model",
    "save_model_file",
    "sweep_csv",
    "sweep_hrf",
]
