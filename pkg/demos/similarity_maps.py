"""Write patch-token similarity maps for an aligned checkpoint.

    python demos/similarity_maps.py RUN_DIR/cg/align.ckpt RUN_DIR/data OUT_DIR

Each ``simmap_<id>.pgm`` has one row per patch (row-major over the grid) and one
column per content token of the caption; bright means similar.
"""
import sys

from cgvlm.checkpoint import load_checkpoint
from cgvlm.evaluation import diagnose

ckpt, data, out = sys.argv[1:4]
report, maps = diagnose(load_checkpoint(ckpt), data, out, n_maps=4)
for sid, smap in maps.items():
    print(sid, " ".join(smap.tokens))
    for row in smap.grid:
        print("   ", " ".join(f"{v:+.2f}" for v in row))
print(f"retrieval i2t {report.i2t:.3f}; contrast per concept:")
for word, score in sorted(report.contrast.items()):
    print(f"  {word:>8} {score:+.3f}")
