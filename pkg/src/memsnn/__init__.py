"""Memory-augmented spiking neural networks.

LIF encoder trained with surrogate gradients, optional supervised contrastive
term, Hopfield and gated-recurrent memory heads, plus silhouette and energy
analysis. Everything runs on numpy with a small reverse-mode autodiff engine.
"""

from .cluster import UndefinedMetricError, interpret, silhouette_samples, silhouette_score
from .data import DatasetMissingError, EventFormatError, load_nmnist, make_synthetic
from .energy import EnergyModel, EnergyReport
from .estimator import SpikingClassifier
from .models import MODEL_IDS, HybridModel, build_model
from .training import TrainConfig, load_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "MODEL_IDS", "DatasetMissingError", "EnergyModel", "EnergyReport", "EventFormatError",
    "HybridModel", "SpikingClassifier", "TrainConfig", "UndefinedMetricError", "build_model",
    "interpret", "load_checkpoint", "load_nmnist", "make_synthetic", "silhouette_samples",
    "silhouette_score", "train",
]
