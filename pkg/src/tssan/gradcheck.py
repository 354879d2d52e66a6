"""Central finite-difference gradient checking.

The numeric side never touches the autodiff backward pass: it re-evaluates
the forward function at perturbed inputs, which keeps it an independent
oracle for the analytic gradients.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def numeric_gradient(fn, array: np.ndarray, eps: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of scalar ``fn`` w.r.t. elements of ``array``.

    ``fn`` takes no arguments; it must read ``array`` afresh on each call
    (perturbations are written in place and restored).  ``indices`` limits
    the sweep to those flat positions; elsewhere the result is zero.
    """
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    which = range(flat.size) if indices is None else indices
    with no_grad():
        for i in which:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(fn())
            flat[i] = orig - eps
            f_minus = float(fn())
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_parameter_gradients(loss_fn, params: dict[str, Tensor], eps: float = 1e-5,
                              floor: float = 1e-8, sample: int | None = None,
                              sample_seed: int = 0) -> dict[str, float]:
    """Compare backward grads of ``params`` against central differences.

    ``loss_fn`` rebuilds the loss from current parameter values.  Returns the
    max relative error per parameter; callers assert against their tolerance.
    The analytic gradients must already be populated (one backward pass).
    ``sample`` caps how many coordinates per parameter are swept (None sweeps
    all of them); the subset is drawn deterministically from ``sample_seed``.
    """
    pick = np.random.default_rng(sample_seed)
    errors = {}
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name} has no gradient")
        indices = None
        if sample is not None and p.data.size > sample:
            indices = pick.choice(p.data.size, size=sample, replace=False)
        numeric = numeric_gradient(loss_fn, p.data, eps=eps, indices=indices)
        analytic = p.grad
        if indices is not None:
            numeric = numeric.reshape(-1)[indices]
            analytic = analytic.reshape(-1)[indices]
        errors[name] = relative_error(analytic, numeric, floor=floor)
    return errors
