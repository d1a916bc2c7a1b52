"""Dialogue packing, the response-only tuning loss, and greedy decoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ValidationError
from .objectives import sequence_nll
from .vocab import BOS, EOS, PAD, SEP, encode

MAX_NEW_TOKENS = 128


@dataclass
class PackedDialogue:
    ids: np.ndarray
    loss_mask: np.ndarray


def _as_ids(x):
    return encode(x) if isinstance(x, str) else [int(i) for i in x]


def pack_dialogue(turns):
    """Lay out ``[BOS] + (SEP q SEP r EOS)*`` with the loss on responses and their EOS.

    ``turns`` holds ``(query, response)`` pairs as text or id lists.
    """
    ids, mask = [BOS], [False]
    for q, r in turns:
        q, r = _as_ids(q), _as_ids(r)
        if not r:
            raise ValidationError("dialogue response is empty")
        ids += [SEP] + q + [SEP]
        mask += [False] * (len(q) + 2)
        ids += r + [EOS]
        mask += [True] * (len(r) + 1)
    return PackedDialogue(np.array(ids, dtype=np.int64), np.array(mask, dtype=bool))


def unpack_dialogue(packed):
    """Inverse of :func:`pack_dialogue`, returning id-list turns."""
    ids = [int(i) for i in np.asarray(packed.ids if isinstance(packed, PackedDialogue) else packed)]
    if not ids or ids[0] != BOS:
        raise ValidationError("packed dialogue must start with BOS")
    turns, i = [], 1
    while i < len(ids):
        if ids[i] != SEP:
            raise ValidationError(f"expected SEP at position {i}")
        j = ids.index(SEP, i + 1)
        k = ids.index(EOS, j + 1)
        turns.append((ids[i + 1:j], ids[j + 1:k]))
        i = k + 1
    return turns


def caption_sequence(text_or_ids):
    """``[BOS] caption [EOS]`` with the loss on the caption tokens and EOS."""
    ids = [BOS] + _as_ids(text_or_ids) + [EOS]
    mask = [False] + [True] * (len(ids) - 1)
    return PackedDialogue(np.array(ids, dtype=np.int64), np.array(mask, dtype=bool))


def pad_batch(seqs):
    """Right-pad packed sequences into (B, L) id and mask arrays."""
    width = max(len(s.ids) for s in seqs)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for b, s in enumerate(seqs):
        ids[b, :len(s.ids)] = s.ids
        mask[b, :len(s.ids)] = s.loss_mask
    return ids, mask


def tune_loss(lm, z, packed):
    """Response-only NLL, averaged per dialogue then over the batch.

    ``packed`` is a list of :class:`PackedDialogue` (or a single one with
    ``z`` of shape (N, d)).
    """
    if isinstance(packed, PackedDialogue):
        packed = [packed]
        z = z.reshape(1, *z.shape)
    ids, mask = pad_batch(packed)
    return sequence_nll(lm, z, ids, mask)


def query_context(query, history=()):
    """Prompt ids ending right where a response should start."""
    ids = [BOS]
    for q, r in history:
        ids += [SEP] + _as_ids(q) + [SEP] + _as_ids(r) + [EOS]
    return ids + [SEP] + _as_ids(query) + [SEP]


def greedy_decode(lm, z, contexts, max_new_tokens=MAX_NEW_TOKENS):
    """Argmax decoding from each context until EOS or the length budget.

    ``z`` is (B, N, d) visual prefixes (N may be 0) and ``contexts`` a list of
    B id lists. Returns the generated ids without the trailing EOS.
    """
    z = z if isinstance(z, Tensor) else Tensor(z)
    seqs = [list(c) for c in contexts]
    n = z.shape[1]
    budget = min(max_new_tokens, lm.max_len - n - max(len(s) for s in seqs))
    out = [[] for _ in seqs]
    done = [False] * len(seqs)
    with ad.no_grad():
        for _ in range(max(budget, 0)):
            width = max(len(s) for s in seqs)
            ids = np.full((len(seqs), width), PAD, dtype=np.int64)
            for b, s in enumerate(seqs):
                ids[b, :len(s)] = s
            logits = lm.forward_multimodal(z, lm.embed(ids)).data
            for b, s in enumerate(seqs):
                if done[b]:
                    continue
                tok = int(np.argmax(logits[b, n + len(s) - 1]))
                if tok == EOS:
                    done[b] = True
                else:
                    out[b].append(tok)
                    s.append(tok)
            if all(done):
                break
    return out
