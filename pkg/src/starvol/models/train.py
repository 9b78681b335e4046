"""Adam training loop for the tiny classifier, with optional poisoning.

The poisoned objective is clean loss minus alpha times the poison-set loss,
with the poison term capped at chance level (log of the class count) so the
repulsion saturates instead of dragging the optimizer to infinity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .mlp import MlpParams, loss_value_and_grad

__all__ = [
    "AdamHyper",
    "AdamState",
    "PoisonConfig",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "adam_train",
    "adam_update",
]


class TrainingError(RuntimeError):
    """Raised when the objective stops being finite."""


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass(frozen=True)
class AdamState:
    """First/second moment buffers plus the step they were taken at."""

    mu: np.ndarray
    nu: np.ndarray
    step: int
    hyper: AdamHyper


@dataclass(frozen=True)
class PoisonConfig:
    dataset: Dataset
    alpha: float = 1.0


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    seed: int = 0
    hyper: AdamHyper = field(default_factory=AdamHyper)
    checkpoint_every: int = 50  # in steps; step 0 and the final step always record
    poison: PoisonConfig | None = None


@dataclass(frozen=True)
class TrainResult:
    checkpoints: tuple[MlpParams, ...]
    adam_states: tuple[AdamState, ...]
    steps: tuple[int, ...]
    metrics: tuple[dict, ...]


def adam_update(
    flat: np.ndarray,
    g: np.ndarray,
    mu: np.ndarray,
    nu: np.ndarray,
    step: int,
    hyper: AdamHyper,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam step; ``step`` is the new 1-based step index."""
    mu = hyper.beta1 * mu + (1.0 - hyper.beta1) * g
    nu = hyper.beta2 * nu + (1.0 - hyper.beta2) * g * g
    mu_hat = mu / (1.0 - hyper.beta1**step)
    nu_hat = nu / (1.0 - hyper.beta2**step)
    flat = flat - hyper.lr * mu_hat / (np.sqrt(nu_hat) + hyper.adam_eps)
    return flat, mu, nu


def adam_train(
    params: MlpParams,
    dataset: Dataset,
    config: TrainConfig,
    val_dataset: Dataset | None = None,
) -> TrainResult:
    """Minibatch Adam over the dataset; deterministic for a fixed config.

    Batch order comes from a generator seeded by ``config.seed`` alone, so a
    rerun reproduces the trajectory bit for bit. Checkpoints (parameters plus
    Adam buffers) are recorded at step 0, every ``checkpoint_every`` steps,
    and at the final step; each record also logs full-set losses.
    """
    if dataset.labels is None:
        raise ValueError("training requires a labeled dataset")
    if config.epochs < 1 or config.batch_size < 1:
        raise ValueError("epochs and batch_size must be >= 1")
    shape = params.shape
    rng = np.random.default_rng(config.seed)
    flat = params.flat.copy()
    mu = np.zeros_like(flat)
    nu = np.zeros_like(flat)
    step = 0
    cap = math.log(dataset.num_classes)
    poison = config.poison

    checkpoints: list[MlpParams] = []
    adam_states: list[AdamState] = []
    steps: list[int] = []
    metrics: list[dict] = []

    def record():
        checkpoints.append(MlpParams(flat, shape))
        adam_states.append(AdamState(mu.copy(), nu.copy(), step, config.hyper))
        steps.append(step)
        row = {"step": step, "train_loss": loss_value_and_grad(flat, shape, dataset)[0]}
        if val_dataset is not None:
            row["val_loss"] = loss_value_and_grad(flat, shape, val_dataset)[0]
        if poison is not None:
            row["poison_loss"] = loss_value_and_grad(flat, shape, poison.dataset)[0]
        metrics.append(row)

    record()
    for _ in range(config.epochs):
        perm = rng.permutation(dataset.m)
        for start in range(0, dataset.m, config.batch_size):
            batch = dataset.subset(perm[start : start + config.batch_size])
            loss, g = loss_value_and_grad(flat, shape, batch)
            objective = loss
            if poison is not None:
                poison_loss, poison_g = loss_value_and_grad(flat, shape, poison.dataset)
                objective = loss - poison.alpha * min(poison_loss, cap)
                if poison_loss < cap:
                    g = g - poison.alpha * poison_g
            if not math.isfinite(objective):
                raise TrainingError(f"non-finite objective at step {step + 1}")
            step += 1
            flat, mu, nu = adam_update(flat, g, mu, nu, step, config.hyper)
            if config.checkpoint_every > 0 and step % config.checkpoint_every == 0:
                record()
    if steps[-1] != step:
        record()
    return TrainResult(tuple(checkpoints), tuple(adam_states), tuple(steps), tuple(metrics))
