"""Layer building blocks shared by the patch encoder and the language model."""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Collects parameter tensors from attributes, in attribute definition order."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, m in enumerate(value):
                    yield from m.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    def set_trainable(self, flag):
        for p in self.parameters():
            p.requires_grad = bool(flag)
            if not flag:
                p.grad = None

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _normal(rng, shape, std):
    return Tensor(rng.normal(0.0, std, size=shape))


class Linear(Module):
    def __init__(self, rng, fan_in, fan_out, std=None):
        std = 1.0 / math.sqrt(fan_in) if std is None else std
        self.weight = _normal(rng, (fan_in, fan_out), std)
        self.bias = Tensor(np.zeros(fan_out))

    def __call__(self, x):
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, d):
        self.gamma = Tensor(np.ones(d))
        self.beta = Tensor(np.zeros(d))

    def __call__(self, x):
        return ad.layer_norm(x, self.gamma, self.beta)


def causal_mask(t):
    return np.tril(np.ones((t, t), dtype=bool))


class SelfAttention(Module):
    def __init__(self, rng, d, n_heads):
        if d % n_heads:
            raise ValueError(f"width {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.qkv = Linear(rng, d, 3 * d)
        self.out = Linear(rng, d, d, std=1.0 / math.sqrt(d) / math.sqrt(2.0))

    def __call__(self, x, causal):
        # x: (B, T, d)
        b, t, d = x.shape
        h = self.n_heads
        dh = d // h
        qkv = self.qkv(x).reshape(b, t, 3, h, dh).transpose(2, 0, 3, 1, 4)  # (3,B,h,T,dh)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        att = ad.softmax(scores, axis=-1, mask=causal_mask(t) if causal else None)
        y = (att @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
        return self.out(y)


class Block(Module):
    """Pre-norm transformer block: attention then a GELU MLP, each residual."""

    def __init__(self, rng, d, n_heads, mlp_ratio=4):
        self.ln1 = LayerNorm(d)
        self.attn = SelfAttention(rng, d, n_heads)
        self.ln2 = LayerNorm(d)
        self.fc1 = Linear(rng, d, mlp_ratio * d)
        self.fc2 = Linear(rng, mlp_ratio * d, d, std=1.0 / math.sqrt(mlp_ratio * d) / math.sqrt(2.0))

    def __call__(self, x, causal):
        x = x + self.attn(self.ln1(x), causal)
        return x + self.fc2(ad.gelu(self.fc1(self.ln2(x))))
