"""Finite-difference curvature probes for the classifier costs.

The full matrix uses central differences of the analytic gradient (one
gradient pair per column, then symmetrization); the diagonal uses second
differences of the cost itself, which is O(n) cost evaluations and the
only affordable probe at full network size.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset
from .mlp import MlpParams, kl_value_and_grad, loss_value_and_grad, make_kl_cost, make_loss_cost

__all__ = ["hessian_diag", "hessian_full"]

FULL_HESSIAN_MAX_DIM = 10_000


def _grad_fn(cost_kind, shape, data):
    # a (cost, grad) callable pair stands in for the named network costs,
    # which keeps the probes testable against pure quadratic surrogates
    if isinstance(cost_kind, tuple):
        return cost_kind[1]
    if cost_kind == "loss":
        if not isinstance(data, Dataset):
            raise ValueError("loss curvature requires a Dataset")
        return lambda flat: loss_value_and_grad(flat, shape, data)[1]
    if cost_kind == "kl":
        anchor, inputs = data
        return lambda flat: kl_value_and_grad(anchor, flat, inputs)[1]
    raise ValueError(f"unknown cost kind {cost_kind!r}")


def _cost_fn(cost_kind, shape, data):
    if isinstance(cost_kind, tuple):
        return cost_kind[0]
    if cost_kind == "loss":
        if not isinstance(data, Dataset):
            raise ValueError("loss curvature requires a Dataset")
        return make_loss_cost(shape, data)
    if cost_kind == "kl":
        anchor, inputs = data
        return make_kl_cost(anchor, inputs)
    raise ValueError(f"unknown cost kind {cost_kind!r}")


def hessian_full(cost_kind: str, params: MlpParams, data, h: float = 1e-3) -> np.ndarray:
    """Full symmetric Hessian from central differences of the gradient."""
    n = params.n
    if n > FULL_HESSIAN_MAX_DIM:
        raise ValueError(f"full hessian limited to {FULL_HESSIAN_MAX_DIM} parameters, got {n}")
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    grad = _grad_fn(cost_kind, params.shape, data)
    flat = params.flat
    hess = np.empty((n, n))
    probe = flat.copy()
    for j in range(n):
        probe[j] = flat[j] + h
        g_plus = grad(probe)
        probe[j] = flat[j] - h
        g_minus = grad(probe)
        probe[j] = flat[j]
        hess[:, j] = (g_plus - g_minus) / (2.0 * h)
    return 0.5 * (hess + hess.T)


def hessian_diag(cost_kind: str, params: MlpParams, data, h: float = 1e-3) -> np.ndarray:
    """Hessian diagonal from second differences: (c+ - 2 c0 + c-) / h^2."""
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    cost = _cost_fn(cost_kind, params.shape, data)
    flat = params.flat
    c0 = cost(flat)
    diag = np.empty(params.n)
    probe = flat.copy()
    for i in range(params.n):
        probe[i] = flat[i] + h
        c_plus = cost(probe)
        probe[i] = flat[i] - h
        c_minus = cost(probe)
        probe[i] = flat[i]
        diag[i] = (c_plus - 2.0 * c0 + c_minus) / (h * h)
    return diag
