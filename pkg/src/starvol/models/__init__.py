"""Tiny dense classifier, its training loop, curvature probes, and datasets."""

from .data import Dataset, load_csv, make_blobs, make_spirals, split_dataset
from .hessian import hessian_diag, hessian_full
from .io import Checkpoint, load_checkpoint, save_checkpoint
from .mdl import DescriptionLength, description_length
from .mlp import (
    MlpParams,
    forward_logits,
    grad,
    init_params,
    kl_cost,
    log_softmax,
    loss_cost,
    make_kl_cost,
    make_loss_cost,
    param_count,
)
from .train import (
    AdamHyper,
    AdamState,
    PoisonConfig,
    TrainConfig,
    TrainResult,
    TrainingError,
    adam_train,
    adam_update,
)

__all__ = [
    "AdamHyper",
    "AdamState",
    "Checkpoint",
    "Dataset",
    "DescriptionLength",
    "MlpParams",
    "PoisonConfig",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "adam_train",
    "adam_update",
    "description_length",
    "forward_logits",
    "grad",
    "hessian_diag",
    "hessian_full",
    "init_params",
    "kl_cost",
    "load_checkpoint",
    "load_csv",
    "log_softmax",
    "loss_cost",
    "make_blobs",
    "make_kl_cost",
    "make_loss_cost",
    "make_spirals",
    "param_count",
    "save_checkpoint",
    "split_dataset",
]
