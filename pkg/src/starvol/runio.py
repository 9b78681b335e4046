"""Run records, config files, and tabular outputs for the command-line tools.

Configs are one JSON object with the sections documented in the README;
command-line flags override individual entries. Every run appends one JSON
Lines record holding the resolved config, the seed, and the aggregated
result, with per-sample detail in a sibling CSV, so any reported number can
be replayed from its record alone.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import os
import subprocess
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .geometry import VolumeEstimate

__all__ = [
    "DEFAULT_CONFIG",
    "build_id",
    "default_seed",
    "load_config",
    "make_run_record",
    "merge_config",
    "read_jsonl",
    "write_jsonl",
    "write_samples_csv",
    "write_sweep_csv",
]

SEED_ENV_VAR = "STARVOL_SEED"

DEFAULT_CONFIG: dict = {
    "seed": None,  # resolved at run time: flag > config file > STARVOL_SEED > 0
    "dataset": {
        "kind": "blobs",  # blobs | spirals | csv
        "dim": 16,
        "classes": 4,
        "train": 256,
        "val": 512,
        "poison": 0,
        "noise": 1.0,
        "center_scale": 2.0,
        "path": None,  # csv only
    },
    "model": {
        "hidden": [32],
        "init": "fan_in",  # "fan_in" or a positive number
    },
    "train": {
        "epochs": 20,
        "batch_size": 32,
        "lr": 0.01,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
        "checkpoint_every": 50,
        "poison_alpha": 0.0,
    },
}


def default_seed() -> int:
    """Seed precedence bottom rung: the environment override, else 0."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise ValueError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from exc


def load_config(path: str | Path) -> dict:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError(f"config root must be a JSON object: {path}")
    return data


def merge_config(base: dict, *overrides: dict) -> dict:
    """Deep-merge dict layers; later layers win, None values are ignored."""
    out = copy.deepcopy(base)
    for layer in overrides:
        _merge_into(out, layer)
    return out


def _merge_into(dst: dict, src: dict) -> None:
    for key, value in src.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(dst.get(key), dict):
            _merge_into(dst[key], value)
        else:
            dst[key] = copy.deepcopy(value)


def build_id() -> str:
    """Identify the code that produced a record: git commit if available."""
    try:
        head = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True,
            text=True,
            cwd=Path(__file__).parent,
            timeout=5,
        )
        if head.returncode == 0:
            return f"git:{head.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return "starvol-0.1.0"


def make_run_record(
    subcommand: str,
    seed: int,
    config: dict,
    estimate: VolumeEstimate,
    wall_time_s: float,
) -> dict:
    return {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "build": build_id(),
        "subcommand": subcommand,
        "seed": seed,
        "config": config,
        "n": estimate.n,
        "k": estimate.k,
        "cutoff": estimate.cutoff,
        "measure": estimate.measure.kind,
        "preconditioner": estimate.preconditioner_id,
        "log_volume": estimate.log_volume,
        "log10_volume": estimate.log_volume / math.log(10.0),
        "max_log_term": estimate.max_log_term,
        "truncated_count": estimate.truncated_count,
        "failed_count": estimate.failed_count,
        "lower_bound_only": estimate.lower_bound_only,
        "log_terms": [s.log_term for s in estimate.samples],
        "wall_time_s": wall_time_s,
    }


def write_jsonl(path: str | Path, record: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    return [json.loads(line) for line in lines if line.strip()]


def write_samples_csv(path: str | Path, estimate: VolumeEstimate) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sample", "radius", "truncated", "failed", "log_importance_norm", "log_term"]
        )
        for i, s in enumerate(estimate.samples):
            writer.writerow(
                [i, repr(s.radius), int(s.truncated), int(s.failed), repr(s.log_importance_norm), repr(s.log_term)]
            )


def write_sweep_csv(path: str | Path, rows: list[dict], fieldnames: list[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
