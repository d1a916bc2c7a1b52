"""Closed word-level vocabulary for the synthetic shape world.

Ids 0-3 are reserved for special tokens; words follow; the table is padded
with unused ids up to ``VOCAB_SIZE``.
"""
from __future__ import annotations

import numpy as np

PAD, BOS, EOS, SEP = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<sep>")
VOCAB_SIZE = 256

COLORS = ("red", "green", "blue", "yellow")
SHAPES = ("circle", "square", "triangle")
NUMBER_WORDS = ("zero", "one", "two", "three")

WORDS = (
    "a", "and", "on", "black", "background", "there", "is", "this", "image",
    "shows", "with", "how", "many", "shapes", "are", "what", "color", "the",
    "yes", "no", ",", ".", "?",
) + COLORS + SHAPES + NUMBER_WORDS

ITOS = SPECIALS + WORDS
STOI = {w: i for i, w in enumerate(ITOS)}
CONCEPT_WORDS = COLORS + SHAPES
assert len(ITOS) <= VOCAB_SIZE


def encode(text):
    """Whitespace-split ``text`` into token ids; unknown words raise ``KeyError``."""
    return [STOI[w] for w in text.split()]


def decode(ids):
    return " ".join(ITOS[i] if i < len(ITOS) else f"<{i}>" for i in ids)


def is_content(ids):
    """True where an id is an ordinary word (not PAD/BOS/EOS/SEP)."""
    return np.asarray(ids) >= len(SPECIALS)
