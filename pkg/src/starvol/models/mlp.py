"""Tiny dense classifier with hand-written forward and backward passes.

Hidden layers use tanh; the final layer emits raw logits consumed by a
softmax inside the cost functions. Parameters live in one flat vector so
the whole network is a point in R^n for the volume estimators, and the
cost closures built here operate directly on flat vectors to keep the
estimator's inner loop allocation-light.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..geometry import MeasureSpec
from .data import Dataset

__all__ = [
    "MlpParams",
    "Shape",
    "forward_logits",
    "grad",
    "init_params",
    "kl_cost",
    "kl_value_and_grad",
    "log_softmax",
    "loss_cost",
    "loss_value_and_grad",
    "make_kl_cost",
    "make_loss_cost",
    "param_count",
]

Shape = tuple[tuple[int, int], ...]


def param_count(shape: Shape) -> int:
    return sum(fan_in * fan_out + fan_out for fan_in, fan_out in shape)


def _validate_shape(shape: Shape) -> Shape:
    shape = tuple((int(i), int(o)) for i, o in shape)
    if not shape:
        raise ValueError("network needs at least one layer")
    for (_, out_prev), (in_next, _) in zip(shape, shape[1:]):
        if out_prev != in_next:
            raise ValueError(f"layer widths do not chain: {out_prev} -> {in_next}")
    if any(i < 1 or o < 1 for i, o in shape):
        raise ValueError("layer widths must be positive")
    return shape


@dataclass(frozen=True)
class MlpParams:
    """Flat parameter vector plus the layer shape needed to interpret it.

    Packing order is per layer: the weight matrix (fan_in x fan_out,
    row-major) followed by the bias vector.
    """

    flat: np.ndarray
    shape: Shape

    def __post_init__(self):
        shape = _validate_shape(self.shape)
        flat = np.array(self.flat, dtype=float, copy=True)
        if flat.ndim != 1 or flat.size != param_count(shape):
            raise ValueError(
                f"flat vector of length {flat.size} does not match shape {shape} "
                f"(expected {param_count(shape)})"
            )
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)
        object.__setattr__(self, "shape", shape)

    @property
    def n(self) -> int:
        return self.flat.size

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return _layer_views(self.flat, self.shape)


def _layer_views(flat: np.ndarray, shape: Shape) -> list[tuple[np.ndarray, np.ndarray]]:
    # zero-copy views into the flat vector
    out = []
    idx = 0
    for fan_in, fan_out in shape:
        w = flat[idx : idx + fan_in * fan_out].reshape(fan_in, fan_out)
        idx += fan_in * fan_out
        b = flat[idx : idx + fan_out]
        idx += fan_out
        out.append((w, b))
    return out


def layer_sigmas(shape: Shape, sigma_rule: str | float = "fan_in") -> list[float]:
    """Per-layer init std: 1/sqrt(fan_in), or a constant if a number is given."""
    if isinstance(sigma_rule, str):
        if sigma_rule != "fan_in":
            raise ValueError(f"unknown sigma rule {sigma_rule!r}")
        return [1.0 / math.sqrt(fan_in) for fan_in, _ in shape]
    value = float(sigma_rule)
    if not (value > 0 and math.isfinite(value)):
        raise ValueError(f"sigma must be positive and finite, got {value}")
    return [value for _ in shape]


def init_params(
    shape: Shape,
    sigma_rule: str | float = "fan_in",
    rng: np.random.Generator | None = None,
) -> tuple[MlpParams, MeasureSpec]:
    """Draw Gaussian init parameters and return them with their own measure.

    Every coordinate of layer l (weights and biases alike) is drawn from a
    zero-mean Gaussian with the layer's std, and the returned Gaussian
    measure carries exactly those per-coordinate stds, so the init
    distribution and the reference measure coincide by construction.
    """
    shape = _validate_shape(shape)
    rng = rng if rng is not None else np.random.default_rng()
    sigmas = layer_sigmas(shape, sigma_rule)
    chunks = []
    sigma_chunks = []
    for (fan_in, fan_out), s in zip(shape, sigmas):
        count = fan_in * fan_out + fan_out
        chunks.append(rng.normal(0.0, s, size=count))
        sigma_chunks.append(np.full(count, s))
    flat = np.concatenate(chunks)
    sigma = np.concatenate(sigma_chunks)
    return MlpParams(flat, shape), MeasureSpec.gaussian(sigma)


def _forward(flat: np.ndarray, shape: Shape, x: np.ndarray) -> np.ndarray:
    a = x
    layers = _layer_views(flat, shape)
    for w, b in layers[:-1]:
        a = np.tanh(a @ w + b)
    w, b = layers[-1]
    return a @ w + b


def forward_logits(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Batched logits; accepts a single input vector or an (m, d) matrix."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.shape[1] != params.shape[0][0]:
        raise ValueError(f"input width {arr.shape[1]} != network fan-in {params.shape[0][0]}")
    logits = _forward(params.flat, params.shape, arr)
    return logits[0] if single else logits


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log softmax, max-shifted for stability."""
    z = np.asarray(logits, dtype=float)
    m = np.max(z, axis=-1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


# -- costs ------------------------------------------------------------------


def loss_cost(params: MlpParams, dataset: Dataset) -> float:
    """Mean cross-entropy of the dataset labels, in nats."""
    if dataset.labels is None:
        raise ValueError("loss cost requires a labeled dataset")
    lp = log_softmax(_forward(params.flat, params.shape, dataset.inputs))
    return float(-np.mean(lp[np.arange(dataset.m), dataset.labels]))


def kl_cost(anchor: MlpParams, params: MlpParams, inputs: np.ndarray) -> float:
    """Mean KL from the anchor's predictive distribution to the candidate's."""
    if anchor.shape != params.shape:
        raise ValueError("anchor and candidate must share the same layer shape")
    return make_kl_cost(anchor, inputs)(params.flat)


def make_loss_cost(shape: Shape, dataset: Dataset) -> Callable[[np.ndarray], float]:
    """Cost handle over flat vectors: mean cross-entropy on the dataset."""
    if dataset.labels is None:
        raise ValueError("loss cost requires a labeled dataset")
    inputs = dataset.inputs
    labels = dataset.labels
    rows = np.arange(dataset.m)

    def cost(flat: np.ndarray) -> float:
        lp = log_softmax(_forward(flat, shape, inputs))
        return float(-np.mean(lp[rows, labels]))

    return cost


def make_kl_cost(anchor: MlpParams, inputs: np.ndarray) -> Callable[[np.ndarray], float]:
    """Cost handle over flat vectors: mean KL(anchor || candidate) on fixed inputs.

    The anchor's predictive log-probabilities are precomputed once, so each
    evaluation costs one forward pass. At the anchor itself the value is
    exactly zero.
    """
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("kl cost requires a non-empty (m, d) input matrix")
    shape = anchor.shape
    anchor_lp = log_softmax(_forward(anchor.flat, shape, x))
    anchor_p = np.exp(anchor_lp)
    row_entropy = np.sum(anchor_p * anchor_lp, axis=1)  # sum_c p log p per row

    def cost(flat: np.ndarray) -> float:
        q_lp = log_softmax(_forward(flat, shape, x))
        return float(np.mean(row_entropy - np.sum(anchor_p * q_lp, axis=1)))

    return cost


# -- gradients ----------------------------------------------------------------


def _forward_cache(flat: np.ndarray, shape: Shape, x: np.ndarray):
    activations = [x]
    layers = _layer_views(flat, shape)
    a = x
    for w, b in layers[:-1]:
        a = np.tanh(a @ w + b)
        activations.append(a)
    w, b = layers[-1]
    return a @ w + b, activations, layers


def _backward(
    shape: Shape,
    layers: list[tuple[np.ndarray, np.ndarray]],
    activations: list[np.ndarray],
    dlogits: np.ndarray,
) -> np.ndarray:
    grads = np.empty(param_count(shape))
    offsets = []
    idx = 0
    for fan_in, fan_out in shape:
        offsets.append(idx)
        idx += fan_in * fan_out + fan_out
    delta = dlogits
    for layer in range(len(shape) - 1, -1, -1):
        fan_in, fan_out = shape[layer]
        a_prev = activations[layer]
        start = offsets[layer]
        grads[start : start + fan_in * fan_out] = (a_prev.T @ delta).ravel()
        grads[start + fan_in * fan_out : start + fan_in * fan_out + fan_out] = delta.sum(axis=0)
        if layer > 0:
            w = layers[layer][0]
            # tanh'(z) = 1 - tanh(z)^2, and a_prev is already tanh(z)
            delta = (delta @ w.T) * (1.0 - a_prev * a_prev)
    return grads


def loss_value_and_grad(
    flat: np.ndarray, shape: Shape, dataset: Dataset
) -> tuple[float, np.ndarray]:
    """Cross-entropy and its gradient via one backward pass."""
    if dataset.labels is None:
        raise ValueError("loss gradient requires a labeled dataset")
    logits, activations, layers = _forward_cache(flat, shape, dataset.inputs)
    lp = log_softmax(logits)
    m = dataset.m
    value = float(-np.mean(lp[np.arange(m), dataset.labels]))
    probs = np.exp(lp)
    probs[np.arange(m), dataset.labels] -= 1.0
    dlogits = probs / m
    return value, _backward(shape, layers, activations, dlogits)


def kl_value_and_grad(
    anchor: MlpParams, flat: np.ndarray, inputs: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean KL from the anchor and its gradient with respect to the candidate."""
    x = np.asarray(inputs, dtype=float)
    shape = anchor.shape
    anchor_lp = log_softmax(_forward(anchor.flat, shape, x))
    anchor_p = np.exp(anchor_lp)
    row_entropy = np.sum(anchor_p * anchor_lp, axis=1)
    logits, activations, layers = _forward_cache(flat, shape, x)
    q_lp = log_softmax(logits)
    m = x.shape[0]
    value = float(np.mean(row_entropy - np.sum(anchor_p * q_lp, axis=1)))
    dlogits = (np.exp(q_lp) - anchor_p) / m
    return value, _backward(shape, layers, activations, dlogits)


def grad(cost_kind: str, params: MlpParams, data) -> np.ndarray:
    """Gradient dispatcher.

    ``cost_kind`` is "loss" with a labeled Dataset, or "kl" with a tuple
    (anchor: MlpParams, inputs: ndarray).
    """
    if cost_kind == "loss":
        return loss_value_and_grad(params.flat, params.shape, data)[1]
    if cost_kind == "kl":
        anchor, inputs = data
        return kl_value_and_grad(anchor, params.flat, inputs)[1]
    raise ValueError(f"unknown cost kind {cost_kind!r}")
