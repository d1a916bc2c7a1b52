"""Toy decoder-only language model with a visual prefix."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError
from .nn import Block, LayerNorm, Module
from .vocab import VOCAB_SIZE


class LanguageModel(Module):
    """Causal transformer; the output head is tied to the embedding table."""

    def __init__(self, vocab_size=VOCAB_SIZE, d=32, n_layers=3, n_heads=4, max_len=256, seed=0):
        rng = np.random.default_rng(seed)
        self.vocab_size = vocab_size
        self.d = d
        self.max_len = max_len
        self.n_heads = n_heads
        self.tok_emb = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(vocab_size, d)))
        self.pos_emb = Tensor(rng.normal(0.0, 0.02, size=(max_len, d)))
        self.blocks = [Block(rng, d, n_heads) for _ in range(n_layers)]
        self.ln_f = LayerNorm(d)

    def embed(self, ids):
        """Embedding rows for ``ids`` (any integer array shape)."""
        return ad.embedding(self.tok_emb, ids)

    def forward_embeddings(self, x):
        """Run the decoder over an input sequence of embeddings ``(B, T, d)``."""
        b, t, d = x.shape
        if d != self.d:
            raise ShapeError(f"input width {d} does not match model width {self.d}")
        if t > self.max_len:
            raise ShapeError(f"sequence length {t} exceeds max_len {self.max_len}")
        h = x + self.pos_emb[:t]
        for blk in self.blocks:
            h = blk(h, causal=True)
        h = self.ln_f(h)
        # tied head, scaled so an untrained model starts near the uniform distribution
        return (h @ self.tok_emb.T) * (1.0 / np.sqrt(self.d))

    def forward_multimodal(self, z, e):
        """Logits for the concatenated sequence ``[Z; E]``.

        ``z`` is (N, d) or (B, N, d) projected visual features (N may be 0);
        ``e`` the matching (M, d) or (B, M, d) token embeddings. Row ``N + j - 1``
        of the result scores the token at text position ``j``.
        """
        single = e.ndim == 2
        if single:
            z = z.reshape(1, *z.shape)
            e = e.reshape(1, *e.shape)
        if z.shape[-1] != e.shape[-1]:
            raise ShapeError(f"visual width {z.shape[-1]} does not match embedding width {e.shape[-1]}")
        if z.shape[0] != e.shape[0]:
            raise ShapeError(f"batch mismatch between visual {z.shape} and text {e.shape}")
        x = ad.concat([z, e], axis=1) if z.shape[1] else e
        logits = self.forward_embeddings(x)
        return logits.reshape(*logits.shape[1:]) if single else logits

    def forward_text(self, ids):
        """Plain text-only forward pass: no visual prefix."""
        ids = np.asarray(ids)
        e = self.embed(ids)
        z = Tensor(np.zeros(ids.shape[:-1] + (0, self.d)))
        return self.forward_multimodal(z, e)


def next_token_logprobs(logits, ids, n_prefix=0):
    """``log p(x_j | prefix, x_<j)`` for text positions ``j = 1..M-1``.

    ``logits`` cover the full ``[Z; text]`` sequence (``n_prefix`` visual rows);
    position ``n_prefix + j - 1`` predicts ``ids[j]``. Returns a (…, M-1) tensor.
    """
    ids = np.asarray(ids, dtype=np.int64)
    m = ids.shape[-1]
    pred = logits[..., n_prefix:n_prefix + m - 1, :]
    return -ad.token_nll(pred, ids[..., 1:])
