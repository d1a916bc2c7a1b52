"""The full vision-language model: frozen encoder, projector, language model, temperature."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor
from .language import LanguageModel
from .objectives import Temperature
from .projector import init_projector, project
from .vision import PatchEncoder
from .vocab import VOCAB_SIZE


@dataclass
class ModelConfig:
    patch_size: int = 14
    image_size: int = 28
    d_v: int = 32
    enc_layers: int = 3
    enc_heads: int = 4
    enc_seed: int = 1234
    d: int = 32
    lm_layers: int = 3
    lm_heads: int = 4
    max_len: int = 256
    vocab_size: int = VOCAB_SIZE
    lm_seed: int = 4321

    def to_dict(self):
        return asdict(self)


class VisionLanguageModel:
    """Groups the four parameter sets under stable name prefixes."""

    GROUPS = ("encoder", "projector", "lm", "temperature")

    def __init__(self, mc=None, projector_variant="mlp2-gelu", projector_seed=0):
        self.config = mc or ModelConfig()
        mc = self.config
        self.encoder = PatchEncoder(mc.patch_size, mc.image_size, mc.d_v, mc.enc_layers, mc.enc_heads,
                                    seed=mc.enc_seed)
        self.lm = LanguageModel(mc.vocab_size, mc.d, mc.lm_layers, mc.lm_heads, mc.max_len, seed=mc.lm_seed)
        self.projector = init_projector(projector_variant, mc.d_v, mc.d, seed=projector_seed)
        self.temperature = Temperature()

    def named_tensors(self):
        for group in self.GROUPS:
            for name, t in getattr(self, group).named_parameters(group + "."):
                yield name, t

    def state(self):
        return {name: t.data.copy() for name, t in self.named_tensors()}

    def load_state(self, state):
        for group in self.GROUPS:
            module = getattr(self, group)
            prefix = group + "."
            module.load_state_dict({k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)})

    def set_stage(self, stage):
        """Set which parameter groups train: ``align`` -> projector + tau, ``tune`` -> projector + LM."""
        self.encoder.set_trainable(False)
        if stage == "align":
            self.lm.set_trainable(False)
            self.projector.set_trainable(True)
            self.temperature.set_trainable(True)
        elif stage == "tune":
            self.lm.set_trainable(True)
            self.projector.set_trainable(True)
            self.temperature.set_trainable(False)
        elif stage == "base":
            self.lm.set_trainable(True)
            self.projector.set_trainable(False)
            self.temperature.set_trainable(False)
        else:
            self.lm.set_trainable(False)
            self.projector.set_trainable(False)
            self.temperature.set_trainable(False)

    def trainable_tensors(self):
        return [(n, t) for n, t in self.named_tensors() if t.requires_grad]

    def encode(self, images):
        return self.encoder.encode(images)

    def project(self, features):
        f = features if isinstance(features, Tensor) else Tensor(np.asarray(features))
        return project(f, self.projector)
