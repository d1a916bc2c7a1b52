"""Central finite-difference checks against the autodiff tape."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad


def numerical_grad(f, t, step=1e-5):
    """d f() / d t by central differences, perturbing ``t.data`` in place."""
    flat = t.data.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f().data)
        flat[i] = orig - step
        lo = float(f().data)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * step)
    return out.reshape(t.shape)


def max_rel_error(analytic, numeric, floor=1e-8):
    """Largest elementwise error, relative to the larger gradient magnitude (floored)."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    if analytic.size == 0:
        return 0.0
    err = np.abs(analytic - numeric)
    # entries where both gradients are tiny compare on an absolute scale
    return float(np.max(err / np.maximum(scale, np.abs(numeric).max() * 1e-3 + floor)))


def check_gradients(f, tensors, step=1e-5):
    """Max relative error between tape gradients and finite differences over ``tensors``.

    ``f`` must rebuild the graph on every call and return a scalar tensor.
    """
    for t in tensors:
        t.grad = None
    ad.backward(f())
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, max_rel_error(analytic, numerical_grad(f, t, step)))
    return worst
