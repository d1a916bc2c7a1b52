import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgvlm.errors import ConfigurationError
from cgvlm.vision import PatchEncoder, blank_image, patchify, unpatchify


def test_patch_count():
    assert patchify(np.zeros((3, 28, 28)), 14).shape == (4, 3 * 14 * 14)


def test_single_patch_is_flattened_image(rng):
    img = rng.random((3, 14, 14))
    p = patchify(img, 14)
    assert p.shape == (1, 588)
    assert np.array_equal(p[0], img.reshape(-1))


def test_patch_order_row_major(rng):
    img = rng.random((3, 28, 28))
    p = patchify(img, 14)
    assert np.array_equal(p[1], img[:, :14, 14:].reshape(-1))
    assert np.array_equal(p[2], img[:, 14:, :14].reshape(-1))


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([1, 2, 4, 7, 14, 28]), st.integers(0, 2**32 - 1))
def test_patchify_round_trip(u, seed):
    img = np.random.default_rng(seed).random((3, 28, 28))
    assert unpatchify(patchify(img, u), u, 28, 28).tobytes() == img.tobytes()


def test_patchify_rejects_indivisible():
    with pytest.raises(ConfigurationError):
        patchify(np.zeros((3, 28, 28)), 5)


def test_blank_image():
    b = blank_image(28, 28)
    assert b.shape == (3, 28, 28) and not b.any()
    p = patchify(b, 14)
    assert p.shape[0] == 4 and not p.any()


def test_encoder_shape_and_determinism(rng):
    enc = PatchEncoder(seed=1)
    img = rng.random((3, 28, 28))
    v1, v2 = enc.encode(img), enc.encode(img.copy())
    assert v1.shape == (4, 32)
    assert v1.tobytes() == v2.tobytes()
    batch = enc.encode(np.stack([img, img]))
    assert batch.shape == (2, 4, 32)


def test_encoder_is_frozen():
    enc = PatchEncoder(seed=1)
    assert all(not t.requires_grad for t in enc.parameters())


def test_encoder_uses_penultimate_block(rng):
    enc = PatchEncoder(seed=1, n_layers=3)
    assert enc.feature_layer == 2
    img = rng.random((3, 28, 28))
    before = enc.encode(img)
    # perturbing the last block must not change the features
    for t in enc.blocks[-1].parameters():
        t.data = t.data + 1.0
    assert enc.encode(img).tobytes() == before.tobytes()


def test_permutation_equivariance_without_positions(rng):
    enc = PatchEncoder(patch_size=7, seed=2, positional="none")
    patches = rng.random((16, 3 * 49))
    perm = rng.permutation(16)
    v = enc.encode_patches(patches)
    vp = enc.encode_patches(patches[perm])
    assert np.allclose(vp, v[perm], atol=1e-12)


def test_blank_rows_identical_with_zero_positions():
    enc = PatchEncoder(seed=3, positional="zero")
    v = enc.encode(blank_image(28, 28))
    assert np.allclose(v, v[0], atol=1e-12)
