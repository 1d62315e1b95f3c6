"""Multi-objective mixture-of-experts regression with min-norm loss weighting."""

from .data import PreparedData, lag_embed, load_csv, prepare, synth_sru
from .model import OMoE, OMoEConfig, gradient_bundle, load_checkpoint, save_checkpoint
from .solver import FWConfig, closed_form_two, frank_wolfe, gram_matrix
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "FWConfig", "OMoE", "OMoEConfig", "PreparedData", "TrainConfig", "closed_form_two",
    "evaluate", "frank_wolfe", "gradient_bundle", "gram_matrix", "lag_embed", "load_checkpoint",
    "load_csv", "prepare", "save_checkpoint", "synth_sru", "train",
]
