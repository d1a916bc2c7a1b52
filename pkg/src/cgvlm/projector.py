"""The trainable visual adapter mapping patch features into LLM embedding space."""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ShapeError
from .nn import Module

VARIANTS = ("linear", "mlp2-gelu")


def _uniform(rng, fan_in, shape):
    # uniform with standard deviation 1/sqrt(fan_in)
    bound = math.sqrt(3.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape))


class Projector(Module):
    def __init__(self, variant, d_v, d, params):
        if variant not in VARIANTS:
            raise ValueError(f"unknown projector variant {variant!r}; expected one of {VARIANTS}")
        self.variant = variant
        self.d_v = d_v
        self.d = d
        for name, value in params.items():
            setattr(self, name, value)

    def __call__(self, v):
        return project(v, self)


def init_projector(variant="mlp2-gelu", d_v=32, d=32, seed=0):
    """Seeded projector; the MLP hidden width equals the output width ``d``."""
    if d_v <= 0 or d <= 0:
        raise ValueError("projector widths must be positive")
    rng = np.random.default_rng(seed)
    if variant == "linear":
        params = {"w": _uniform(rng, d_v, (d_v, d)), "b": _uniform(rng, d_v, (d,))}
    elif variant == "mlp2-gelu":
        params = {
            "w1": _uniform(rng, d_v, (d_v, d)), "b1": _uniform(rng, d_v, (d,)),
            "w2": _uniform(rng, d, (d, d)), "b2": _uniform(rng, d, (d,)),
        }
    else:
        raise ValueError(f"unknown projector variant {variant!r}; expected one of {VARIANTS}")
    p = Projector(variant, d_v, d, params)
    p.set_trainable(True)
    return p


def project(v, p):
    """``Z = h(V; theta)`` applied independently to every patch row."""
    v = as_tensor(v)
    if v.shape[-1] != p.d_v:
        raise ShapeError(f"feature width {v.shape[-1]} does not match projector input {p.d_v}")
    if p.variant == "linear":
        return ad.row_matmul(v, p.w) + p.b
    return ad.row_matmul(ad.gelu(ad.row_matmul(v, p.w1) + p.b1), p.w2) + p.b2
