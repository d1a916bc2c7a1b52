"""Stage-1 alignment losses: generative captioning, patch-pooled contrastive, and their sum."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import DegenerateInputError, EmptyLossError
from .nn import Module

TAU_INIT = 1.0 / 0.07
TAU_MIN, TAU_MAX = 1.0, 100.0


class Temperature(Module):
    """Learnable similarity scale, stored as ``log_tau`` and clamped after updates."""

    def __init__(self, tau=TAU_INIT, tau_min=TAU_MIN, tau_max=TAU_MAX):
        self.tau_min = tau_min
        self.tau_max = tau_max
        self.log_tau = Tensor(np.array(math.log(tau)), requires_grad=True)

    @property
    def value(self):
        return float(np.exp(self.log_tau.data))

    def __call__(self):
        return ad.exp(self.log_tau)

    def clamp_(self):
        self.log_tau.data = np.clip(self.log_tau.data, math.log(self.tau_min), math.log(self.tau_max))


def pool_descriptor(z):
    """Mean of the N patch rows of ``z`` ((N, d) or (B, N, d)).

    Rows are put in a canonical order before summing so the result is
    bit-identical under any permutation of the patches.
    """
    z = as_tensor(z)
    if z.shape[-2] == 0:
        raise DegenerateInputError("cannot pool an image with zero patches")
    return ad.mean(ad.sort_rows(z), axis=-2)


def _l2_normalize(x, axis=-1, what="vector"):
    norms = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    if (norms == 0).any():
        raise DegenerateInputError(f"zero-norm {what}; cosine similarity is undefined")
    return x / ad.sqrt((x * x).sum(axis=axis, keepdims=True))


def scaled_cosine(u, v, tau):
    """``tau * u.v / (|u| |v|)`` for two 1-D vectors."""
    u, v = as_tensor(u), as_tensor(v)
    return as_tensor(tau) * (_l2_normalize(u) * _l2_normalize(v)).sum()


def caption_centroids(embeddings, content_mask):
    """Per caption, the mean of unit-normalised content-token embeddings: (B, d).

    ``embeddings`` is (B, M, d); only positions with ``content_mask`` count
    toward the average, and their count is the divisor.
    """
    e = as_tensor(embeddings)
    mask = np.asarray(content_mask, dtype=bool)
    counts = mask.sum(axis=-1)
    if (counts == 0).any():
        raise DegenerateInputError("caption has no content tokens")
    sq = (e.data * e.data).sum(axis=-1)
    if (sq[mask] == 0).any():
        raise DegenerateInputError("zero-norm token embedding; cosine similarity is undefined")
    safe_sq = np.where(mask, 0.0, 1.0)[..., None]
    # non-content rows are replaced by exact zeros so they add nothing to the sum
    norms = ad.sqrt((e * e).sum(axis=-1, keepdims=True) + safe_sq)
    unit = ad.where(mask[..., None], e / norms, 0.0)
    total = ad.sort_rows(unit).sum(axis=-2)
    return total * (1.0 / counts.astype(np.float64))[..., None]


def similarity_matrix(descriptors, embeddings, content_mask, tau):
    """``S[i, j]``: mean scaled cosine between descriptor i and content tokens of caption j."""
    zhat = _l2_normalize(as_tensor(descriptors), what="image descriptor")
    centroids = caption_centroids(embeddings, content_mask)
    return as_tensor(tau) * (zhat @ centroids.T)


def image_sentence_similarity(descriptor, embeddings, content_mask, tau):
    """Similarity of one image descriptor (d,) with one caption's embeddings (M, d)."""
    descriptor, embeddings = as_tensor(descriptor), as_tensor(embeddings)
    s = similarity_matrix(descriptor.reshape(1, -1), embeddings.reshape(1, *embeddings.shape),
                          np.asarray(content_mask)[None], tau)
    return s.reshape(())


def contrastive_loss_from_similarity(s, symmetric=False):
    """InfoNCE over the rows of ``S`` (image as anchor); optionally averaged with the column direction."""
    b = s.shape[0]
    diag = (np.arange(b), np.arange(b))
    loss = -ad.log_softmax(s, axis=1)[diag].mean()
    if symmetric:
        loss = (loss - ad.log_softmax(s, axis=0)[diag].mean()) * 0.5
    return loss


def literal_contrastive_value(s):
    """Mean diagonal softmax probability, i.e. the ratio form without log or negation."""
    s = np.asarray(s.data if isinstance(s, Tensor) else s)
    e = np.exp(s - s.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    return float(np.mean(np.diag(p)))


def contrastive_loss(descriptors, embeddings, content_mask, tau, symmetric=False):
    s = similarity_matrix(descriptors, embeddings, content_mask, tau)
    return contrastive_loss_from_similarity(s, symmetric=symmetric)


def sequence_nll(lm, z, ids, loss_mask):
    """Mean NLL over supervised text positions, per sample, then averaged over the batch.

    ``ids`` (B, L) starts with BOS; ``loss_mask[b, j]`` marks ``ids[b, j]`` as a
    target. ``z`` (B, N, d) is the visual prefix.
    """
    ids = np.asarray(ids, dtype=np.int64)
    loss_mask = np.asarray(loss_mask, dtype=bool)
    target_mask = loss_mask[:, 1:]
    counts = target_mask.sum(axis=1)
    if (counts == 0).any():
        raise EmptyLossError("a sequence has no supervised positions; the loss is empty")
    n = z.shape[1]
    logits = lm.forward_multimodal(z, lm.embed(ids))
    nll = ad.token_nll(logits[:, n:n + ids.shape[1] - 1, :], ids[:, 1:])
    per_sample = (nll * target_mask.astype(np.float64)).sum(axis=1) * (1.0 / counts.astype(np.float64))
    return per_sample.sum() * (1.0 / ids.shape[0])


def generative_alignment_loss(lm, z, ids, loss_mask):
    """Captioning loss: NLL of caption tokens conditioned on the visual prefix."""
    return sequence_nll(lm, z, ids, loss_mask)


@dataclass
class AlignmentLossReport:
    gen_loss: float
    con_loss: float
    cg_loss: float
    alpha: float
    tau: float
    con_literal: float
    total: Tensor  # differentiable CG loss

    def row(self):
        return {"gen_loss": self.gen_loss, "con_loss": self.con_loss, "cg_loss": self.cg_loss,
                "tau": self.tau, "alpha": self.alpha}


def cg_loss(lm, z, ids, loss_mask, content_mask, has_image, alpha, temperature,
            symmetric=False, gen_weight=1.0):
    """Generative loss plus ``alpha`` times the contrastive loss.

    Text-only samples (``has_image`` false) join only the generative term.
    ``gen_weight=0`` drops the generative term entirely (contrastive-only ablation).
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    has_image = np.asarray(has_image, dtype=bool)
    tau = temperature()
    if gen_weight:
        gen = generative_alignment_loss(lm, z, ids, loss_mask)
    else:
        gen = Tensor(np.array(0.0))
    if has_image.sum() >= 1:
        sel = np.flatnonzero(has_image)
        zi = z if has_image.all() else z[sel]
        desc = pool_descriptor(zi)
        emb = lm.embed(np.asarray(ids)[sel])
        s = similarity_matrix(desc, emb, np.asarray(content_mask)[sel], tau)
        con = contrastive_loss_from_similarity(s, symmetric=symmetric)
        literal = literal_contrastive_value(s)
    else:
        con, literal = Tensor(np.array(0.0)), float("nan")
    if gen_weight not in (0, 1):
        gen = gen * float(gen_weight)
    total = gen + con * float(alpha) if gen_weight else con * float(alpha)
    return AlignmentLossReport(
        gen_loss=gen.item(), con_loss=con.item(), cg_loss=total.item(), alpha=float(alpha),
        tau=temperature.value, con_literal=literal, total=total,
    )
