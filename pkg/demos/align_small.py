"""Stage 1 on a small dataset: generative-only versus CG alignment.

Trains a text-only base model, then aligns the projector twice from it and
compares in-batch retrieval and concept contrast on held-out scenes.
Takes a minute or two on one core.
"""
import sys
import tempfile
from pathlib import Path

from cgvlm.data import write_dataset
from cgvlm.evaluation import evaluate
from cgvlm.training import TrainConfig, pretrain_align, pretrain_language_model

root = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="cgvlm-demo-"))
data = root / "data"
write_dataset(data, n_pretrain=1024, n_instruct=200, n_eval=128, seed=0)
print("dataset in", data)

base = TrainConfig(stage="base", epochs=2, data_dir=str(data), out_dir=str(root / "base"))
pretrain_language_model(base)

for objective in ("gen", "cg"):
    cfg = TrainConfig(stage="align", objective=objective, lr=1e-2, data_dir=str(data),
                      out_dir=str(root / objective), init=str(root / "base" / "base.ckpt"))
    ckpt = pretrain_align(cfg)
    m = evaluate(ckpt, data)
    print(f"{objective:>3}: i2t {m['i2t_top1']:.3f}  t2i {m['t2i_top1']:.3f}  "
          f"contrast {m['contrast_mean']:+.3f}  zero-shot answers {m['answer_accuracy']:.3f}")
