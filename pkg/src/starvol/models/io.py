"""Checkpoint files: flat parameters, layer shape, Adam buffers, init sigmas.

Checkpoints are versioned JSON with arrays as plain float lists. Python's
float repr round-trips exactly, so saving the same state twice produces
byte-identical files and loading recovers bit-identical vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mlp import MlpParams
from .train import AdamHyper, AdamState

__all__ = ["Checkpoint", "load_checkpoint", "save_checkpoint"]

FORMAT_NAME = "starvol-checkpoint"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Checkpoint:
    params: MlpParams
    adam: AdamState
    sigma: np.ndarray  # per-coordinate init stds (the Gaussian measure)
    step: int
    config: dict  # resolved run config the checkpoint came from


def save_checkpoint(path: str | Path, checkpoint: Checkpoint) -> None:
    payload = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "step": checkpoint.step,
        "shape": [[int(i), int(o)] for i, o in checkpoint.params.shape],
        "flat": [float(x) for x in checkpoint.params.flat],
        "adam_mu": [float(x) for x in checkpoint.adam.mu],
        "adam_nu": [float(x) for x in checkpoint.adam.nu],
        "adam_step": checkpoint.adam.step,
        "hyper": {
            "lr": checkpoint.adam.hyper.lr,
            "beta1": checkpoint.adam.hyper.beta1,
            "beta2": checkpoint.adam.hyper.beta2,
            "adam_eps": checkpoint.adam.hyper.adam_eps,
        },
        "sigma": [float(x) for x in checkpoint.sigma],
        "config": checkpoint.config,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = json.loads(Path(path).read_text())
    if data.get("format") != FORMAT_NAME:
        raise ValueError(f"not a checkpoint file: {path}")
    if data.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')}")
    shape = tuple((int(i), int(o)) for i, o in data["shape"])
    params = MlpParams(np.asarray(data["flat"], dtype=float), shape)
    hyper = AdamHyper(**data["hyper"])
    adam = AdamState(
        mu=np.asarray(data["adam_mu"], dtype=float),
        nu=np.asarray(data["adam_nu"], dtype=float),
        step=int(data["adam_step"]),
        hyper=hyper,
    )
    sigma = np.asarray(data["sigma"], dtype=float)
    return Checkpoint(params=params, adam=adam, sigma=sigma, step=int(data["step"]), config=data["config"])
