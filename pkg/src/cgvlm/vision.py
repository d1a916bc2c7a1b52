"""Image patching and the frozen toy patch encoder."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError
from .nn import Block, LayerNorm, Linear, Module


def blank_image(height, width):
    """All-zero placeholder image used for text-only samples."""
    return np.zeros((3, height, width), dtype=np.float64)


def patchify(image, patch_size):
    """Split a ``(3, H, W)`` image into ``N = (H/U)(W/U)`` flattened patches.

    Patches are ordered row-major over the patch grid; each patch is flattened
    channel-major, so its length is ``3 * U * U``.
    """
    image = np.asarray(image, dtype=np.float64)
    c, h, w = image.shape
    u = int(patch_size)
    if u <= 0 or h % u or w % u:
        raise ConfigurationError(f"image {h}x{w} is not divisible into {u}x{u} patches")
    gh, gw = h // u, w // u
    return image.reshape(c, gh, u, gw, u).transpose(1, 3, 0, 2, 4).reshape(gh * gw, c * u * u)


def unpatchify(patches, patch_size, height, width, channels=3):
    u = int(patch_size)
    gh, gw = height // u, width // u
    return (np.asarray(patches).reshape(gh, gw, channels, u, u)
            .transpose(2, 0, 3, 1, 4).reshape(channels, height, width))


class PatchEncoder(Module):
    """Randomly initialised, permanently frozen stand-in for a pre-trained ViT.

    ``encode`` returns the output of the penultimate block, never the last.
    """

    def __init__(self, patch_size=14, image_size=28, d_v=32, n_layers=3, n_heads=4,
                 seed=0, positional="learned"):
        if image_size % patch_size:
            raise ConfigurationError(f"image size {image_size} not divisible by patch size {patch_size}")
        rng = np.random.default_rng(seed)
        self.patch_size = patch_size
        self.image_size = image_size
        self.d_v = d_v
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.n_patches = (image_size // patch_size) ** 2
        self.positional = positional
        self.patch_embed = Linear(rng, 3 * patch_size * patch_size, d_v)
        if positional == "learned":
            self.pos = Tensor(rng.normal(0.0, 0.5, size=(self.n_patches, d_v)))
        elif positional in ("zero", "none"):
            self.pos = Tensor(np.zeros((self.n_patches, d_v)))
        else:
            raise ConfigurationError(f"unknown positional mode {positional!r}")
        self.blocks = [Block(rng, d_v, n_heads) for _ in range(n_layers)]
        self.ln_f = LayerNorm(d_v)
        self.set_trainable(False)

    @property
    def feature_layer(self):
        return self.n_layers - 1

    def encode_patches(self, patches):
        """Features ``V`` (N x d_v) for one patch sequence, or (B, N, d_v) for a stack."""
        patches = np.asarray(patches, dtype=np.float64)
        single = patches.ndim == 2
        if single:
            patches = patches[None]
        with ad.no_grad():
            x = self.patch_embed(Tensor(patches))
            if self.positional != "none":
                x = x + self.pos
            for blk in self.blocks[: self.feature_layer]:
                x = blk(x, causal=False)
        out = x.data
        return out[0] if single else out

    def encode(self, images):
        """Encode a single ``(3, H, W)`` image or a ``(B, 3, H, W)`` stack."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            return self.encode_patches(patchify(images, self.patch_size))
        return self.encode_patches(np.stack([patchify(im, self.patch_size) for im in images]))
