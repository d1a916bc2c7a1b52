"""Alignment diagnostics: patch-token similarity maps, contrast scores and retrieval."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, ValidationError


@dataclass
class SimilarityMap:
    grid: np.ndarray          # (N, M) unscaled cosine, patch x content token
    patch_grid: tuple         # (rows, cols) of the patch layout
    tokens: list = field(default_factory=list)


def _unit_rows(x, what):
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    if (norms == 0).any():
        raise DegenerateInputError(f"zero-norm {what} row")
    return x / norms


def similarity_map(z, e, content_mask=None, tokens=None, patch_grid=None):
    """Cosine similarity of every projected patch with every content-token embedding."""
    z = np.asarray(getattr(z, "data", z), dtype=np.float64)
    e = np.asarray(getattr(e, "data", e), dtype=np.float64)
    if content_mask is not None:
        keep = np.asarray(content_mask, dtype=bool)
        e = e[keep]
        if tokens is not None:
            tokens = [t for t, k in zip(tokens, keep) if k]
    grid = _unit_rows(z, "patch") @ _unit_rows(e, "token").T
    if patch_grid is None:
        side = int(round(np.sqrt(z.shape[0])))
        patch_grid = (side, side) if side * side == z.shape[0] else (z.shape[0], 1)
    return SimilarityMap(grid=grid, patch_grid=tuple(patch_grid), tokens=list(tokens or []))


def contrast_score(smap, token_index, object_patch_indices):
    """Mean similarity on object patches minus mean on the remaining patches, for one token."""
    grid = smap.grid if isinstance(smap, SimilarityMap) else np.asarray(smap)
    obj = sorted(set(int(i) for i in object_patch_indices))
    rest = [i for i in range(grid.shape[0]) if i not in set(obj)]
    if not obj or not rest:
        raise ValidationError("object and background patch sets must both be non-empty")
    col = grid[:, token_index]
    return float(col[obj].mean() - col[rest].mean())


def retrieval_accuracy(s):
    """Top-1 (image->text, text->image) accuracy of a square similarity matrix.

    An item counts as correct only if its diagonal entry strictly beats every
    other entry in its row (resp. column); ties are failures.
    """
    s = np.asarray(getattr(s, "data", s), dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValidationError(f"similarity matrix must be square, got {s.shape}")
    b = s.shape[0]
    diag = np.diag(s)
    off = s + np.diag(np.full(b, -np.inf))
    i2t = float(np.mean(diag > off.max(axis=1))) if b > 1 else 1.0
    t2i = float(np.mean(diag > off.max(axis=0))) if b > 1 else 1.0
    return i2t, t2i


def mean_margin(s):
    """Mean diagonal minus mean off-diagonal entry of ``S``."""
    s = np.asarray(getattr(s, "data", s), dtype=np.float64)
    b = s.shape[0]
    if b < 2:
        return 0.0
    off = (s.sum() - np.trace(s)) / (b * b - b)
    return float(np.trace(s) / b - off)


@dataclass
class AlignmentReport:
    step: int
    i2t: float
    t2i: float
    margin: float
    contrast: dict = field(default_factory=dict)  # concept word -> mean contrast score

    def row(self):
        out = {"step": self.step, "i2t_top1": self.i2t, "t2i_top1": self.t2i, "mean_margin": self.margin}
        for k in sorted(self.contrast):
            out[f"contrast_{k}"] = self.contrast[k]
        return out


def to_pgm_bytes(grid):
    """8-bit grayscale PGM; cosine -1 maps to 0 and +1 to 255 (floor)."""
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    pix = np.floor((np.clip(grid, -1.0, 1.0) + 1.0) * 0.5 * 255.0).astype(np.uint8)
    return f"P5 {w} {h} 255\n".encode() + pix.tobytes()


def read_pgm(path):
    raw = Path(path).read_bytes()
    header, _, body = raw.partition(b"\n")
    magic, w, h, maxval = header.split()
    if magic != b"P5" or maxval != b"255":
        raise ValidationError(f"{path}: unsupported PGM header {header!r}")
    return np.frombuffer(body, dtype=np.uint8).reshape(int(h), int(w))


def emit_report(reports, out_dir, maps=None):
    """Write ``alignment_report.csv`` and one ``simmap_<id>.pgm`` per similarity map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(reports, AlignmentReport):
        reports = [reports]
    rows = [r.row() for r in reports]
    fields = []
    for r in rows:
        fields += [k for k in r if k not in fields]
    written = []
    path = out / "alignment_report.csv"
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    written.append(path)
    for key, smap in (maps or {}).items():
        p = out / f"simmap_{key}.pgm"
        p.write_bytes(to_pgm_bytes(smap.grid if isinstance(smap, SimilarityMap) else smap))
        written.append(p)
    return written


def read_report(path):
    with open(path, newline="") as f:
        return [{k: (float(v) if v not in ("",) else None) for k, v in row.items()}
                for row in csv.DictReader(f)]
