import os

import numpy as np
import pytest

from cgvlm.data import write_dataset
from cgvlm.experiments import DESK, Workbench
from cgvlm.language import LanguageModel
from cgvlm.model import ModelConfig
from cgvlm.training import TrainConfig, pretrain_language_model

SMALL_MODEL = ModelConfig(d_v=8, enc_layers=2, enc_heads=2, d=8, lm_layers=1, lm_heads=2, max_len=64).to_dict()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """A small on-disk dataset: 64 captions, 100 dialogues, 16 eval scenes."""
    root = tmp_path_factory.mktemp("data")
    write_dataset(root, n_pretrain=64, n_instruct=100, n_eval=16, seed=3)
    return root


@pytest.fixture(scope="session")
def tiny_base(tiny_data, tmp_path_factory):
    """A few steps of text pre-training for the small model."""
    out = tmp_path_factory.mktemp("base")
    cfg = TrainConfig(stage="base", epochs=1, batch_size=16, data_dir=str(tiny_data), out_dir=str(out),
                      model=dict(SMALL_MODEL))
    pretrain_language_model(cfg)
    return out / "base.ckpt"


@pytest.fixture
def small_lm():
    return LanguageModel(vocab_size=64, d=8, n_layers=2, n_heads=2, max_len=32, seed=0)


@pytest.fixture(scope="session")
def desk_bench(tmp_path_factory):
    """Cached desk-protocol pipeline on the default dataset.

    Set ``CGVLM_BENCH`` to a directory to keep the runs between sessions.
    """
    root = os.environ.get("CGVLM_BENCH") or tmp_path_factory.mktemp("bench")
    return Workbench(root, DESK, log=lambda *a: None)
