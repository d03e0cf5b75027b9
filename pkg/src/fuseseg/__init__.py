"""Robust multimodal brain-tumor segmentation with feature disentanglement
and gated fusion, built on a from-scratch numpy autodiff core."""

from .caseio import REGIONS, Case, RegionSpec, read_case, read_manifest, write_case
from .checkpoint import load_checkpoint, save_checkpoint
from .config import NetworkConfig, TrainConfig, load_config
from .errors import (ConfigError, ContractError, DegenerateInputError,
                     DimensionError, FusesegError, NumericError, ParseError)
from .estimator import MultimodalSegmenter
from .evaluate import (EvalTable, ablate, evaluate_cases,
                       evaluate_combinations, hard_dice, predict_labels,
                       reconstruct_volumes)
from .losses import (LossBreakdown, class_weights_online,
                     compute_loss_breakdown, kl_loss, one_hot, rec_loss,
                     seg_loss, total_loss)
from .model import (ModalityMask, Network, sample_modality_mask)
from .optim import Adam, poly_lr
from .phantom import PhantomConfig, crop_patch, normalize, synth_case
from .train import TrainResult, train, train_cases

__version__ = "0.1.0"

__all__ = [
    "Adam", "Case", "ConfigError", "ContractError", "DegenerateInputError",
    "DimensionError", "EvalTable", "FusesegError", "LossBreakdown",
    "ModalityMask", "MultimodalSegmenter", "Network", "NetworkConfig",
    "NumericError", "ParseError", "PhantomConfig", "REGIONS", "RegionSpec",
    "TrainConfig", "TrainResult", "ablate", "class_weights_online",
    "compute_loss_breakdown", "crop_patch", "evaluate_cases",
    "evaluate_combinations", "hard_dice", "kl_loss", "load_checkpoint",
    "load_config", "normalize", "one_hot", "poly_lr", "predict_labels",
    "read_case", "read_manifest", "rec_loss", "reconstruct_volumes",
    "sample_modality_mask", "save_checkpoint", "seg_loss", "synth_case",
    "total_loss", "train", "train_cases", "write_case",
]
