"""Shared test helpers: the finite-difference gradient oracle."""

import numpy as np
import pytest

from zslabel.tensor import Tensor


def numeric_gradient(fn, tensor: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued fn w.r.t. one
    tensor's entries. Independent of the autodiff path it checks."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = fn()
        flat[i] = orig - step
        f_minus = fn()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Worst relative disagreement; the floor keeps finite-difference
    noise on true-zero gradients from dominating."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


@pytest.fixture
def rng_factory():
    from zslabel.tensor import Rng

    return Rng
