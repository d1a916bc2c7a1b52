import math

import numpy as np
import pytest

from cgvlm import autodiff as ad
from cgvlm.autodiff import Tensor
from cgvlm.errors import EmptyLossError, ShapeError
from cgvlm.language import LanguageModel, next_token_logprobs
from cgvlm.objectives import generative_alignment_loss
from cgvlm.vocab import BOS, EOS, VOCAB_SIZE, decode, encode


def test_embedding_rows(small_lm, rng):
    ids = np.array([5, 7, 5])
    e = small_lm.embed(ids).data
    assert np.array_equal(e[0], e[2])
    assert small_lm.embed(np.array([], dtype=np.int64)).shape == (0, 8)
    ids = rng.integers(0, 64, size=10)
    onehot = np.eye(64)[ids]
    assert np.array_equal(onehot @ small_lm.tok_emb.data, small_lm.embed(ids).data)


def test_multimodal_shape(rng):
    lm = LanguageModel(vocab_size=64, d=8, n_layers=1, n_heads=2, max_len=32, seed=1)
    z = Tensor(rng.normal(size=(4, 8)))
    e = lm.embed(rng.integers(0, 64, size=6))
    assert lm.forward_multimodal(z, e).shape == (10, 64)


def test_empty_prefix_matches_text_path(small_lm, rng):
    ids = rng.integers(0, 64, size=(2, 7))
    a = small_lm.forward_text(ids).data
    b = small_lm.forward_multimodal(Tensor(np.zeros((2, 0, 8))), small_lm.embed(ids)).data
    assert a.tobytes() == b.tobytes()


def test_causality(small_lm, rng):
    n, ids = 3, rng.integers(4, 64, size=9)
    z = Tensor(rng.normal(size=(n, 8)))
    base = small_lm.forward_multimodal(z, small_lm.embed(ids)).data
    for k in range(1, 9):
        changed = ids.copy()
        changed[k] = (changed[k] + 1) % 64
        out = small_lm.forward_multimodal(z, small_lm.embed(changed)).data
        assert out[:n + k].tobytes() == base[:n + k].tobytes()
        assert not np.array_equal(out[n + k:], base[n + k:])


def test_width_mismatch(small_lm):
    with pytest.raises(ShapeError):
        small_lm.forward_multimodal(Tensor(np.zeros((2, 5))), small_lm.embed(np.array([1, 2])))


def test_uniform_logprobs():
    logits = Tensor(np.zeros((5, 16)))
    lp = next_token_logprobs(logits, np.array([1, 4, 5, 6, 2]))
    assert np.allclose(lp.data, -math.log(16), atol=1e-15)


def test_logprobs_agree_with_cross_entropy(small_lm, rng):
    ids = rng.integers(0, 64, size=8)
    n = 2
    z = Tensor(rng.normal(size=(n, 8)))
    logits = small_lm.forward_multimodal(z, small_lm.embed(ids))
    mask = rng.random(7) < 0.6
    mask[0] = True
    lp = next_token_logprobs(logits, ids, n_prefix=n).data
    ce = ad.cross_entropy(logits[n:n + 7], ids[1:], mask).item()
    assert abs(-lp[mask].mean() - ce) <= 1e-12
    with pytest.raises(EmptyLossError):
        ad.cross_entropy(logits[n:n + 7], ids[1:], np.zeros(7, bool))


def test_untrained_loss_near_uniform():
    ids = np.array([[BOS] + encode("a red circle and a blue square on a black background .") + [EOS]])
    mask = np.ones_like(ids, dtype=bool)
    mask[:, 0] = False
    for seed in range(20):
        lm = LanguageModel(seed=seed)
        z = Tensor(np.random.default_rng(seed).normal(size=(1, 4, 32)))
        loss = generative_alignment_loss(lm, z, ids, mask).item()
        assert abs(loss - math.log(VOCAB_SIZE)) <= 0.3


def test_empty_prefix_loss_is_text_loss(small_lm, rng):
    ids = np.concatenate([[1], rng.integers(4, 64, size=6), [2]])[None]
    mask = np.ones_like(ids, dtype=bool)
    mask[:, 0] = False
    with_prefix = generative_alignment_loss(small_lm, Tensor(np.zeros((1, 0, 8))), ids, mask).item()
    logits = small_lm.forward_text(ids)
    text = ad.cross_entropy(logits[0, :-1], ids[0, 1:], mask[0, 1:]).item()
    assert with_prefix == text


def test_vocab_round_trip():
    text = "is there a red circle ?"
    assert decode(encode(text)) == text
