"""Synthetic shape scenes: rendering, captions, instruction dialogues and manifests.

A scene places 1-3 coloured shapes in distinct cells of a 2x2 grid on a
28x28 black canvas. Rasterisation uses integer arithmetic only, so the same
scene renders to identical bytes everywhere.
"""
from __future__ import annotations

import itertools
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ValidationError
from .vocab import COLORS, NUMBER_WORDS, SHAPES

CANVAS = 28
GRID = 2
CELL = CANVAS // GRID
IMAGE_MAGIC = b"CGVLIMG0"
FRACTIONS = {"001": 0.01, "010": 0.10, "100": 1.00}

RGB = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
}

CAPTION_TEMPLATES = (
    "{objs} on a black background .",
    "there is {objs} .",
    "this image shows {objs} .",
    "a black background with {objs} .",
)


class GenerationError(ValueError):
    """Requested more distinct scenes than exist."""


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    cell: int  # row-major index into the 2x2 grid


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple = ()

    def __post_init__(self):
        cells = [o.cell for o in self.objects]
        if len(set(cells)) != len(cells):
            raise ValidationError("two objects share a grid cell")
        if len(self.objects) > GRID * GRID:
            raise ValidationError("too many objects for the grid")
        for o in self.objects:
            if o.shape not in SHAPES or o.color not in RGB or not 0 <= o.cell < GRID * GRID:
                raise ValidationError(f"invalid object {o}")

    def sorted_objects(self):
        return tuple(sorted(self.objects, key=lambda o: o.cell))

    def to_json(self):
        return [[o.shape, o.color, o.cell] for o in self.sorted_objects()]

    @classmethod
    def from_json(cls, items):
        return cls(tuple(SceneObject(s, c, int(cell)) for s, c, cell in items))


def _shape_mask(shape):
    y, x = np.mgrid[0:CELL, 0:CELL]
    if shape == "circle":
        return (2 * y - 13) ** 2 + (2 * x - 13) ** 2 <= 100
    if shape == "square":
        return (y >= 2) & (y <= 11) & (x >= 2) & (x <= 11)
    if shape == "triangle":
        return (y >= 2) & (y <= 11) & (np.abs(2 * x - 13) <= y - 1)
    raise ValidationError(f"unknown shape {shape!r}")


SHAPE_MASKS = {s: _shape_mask(s) for s in SHAPES}


def object_mask(obj, canvas=CANVAS):
    m = np.zeros((canvas, canvas), dtype=bool)
    r, c = divmod(obj.cell, GRID)
    m[r * CELL:(r + 1) * CELL, c * CELL:(c + 1) * CELL] = SHAPE_MASKS[obj.shape]
    return m


def render(scene):
    """Rasterise ``scene`` to a (3, 28, 28) float image; background is 0."""
    img = np.zeros((3, CANVAS, CANVAS), dtype=np.float64)
    for obj in scene.objects:
        m = object_mask(obj)
        for ch, val in enumerate(RGB[obj.color]):
            img[ch][m] = val
    return img


def object_patch_indices(scene, patch_size, predicate=lambda o: True):
    """Patch indices (row-major) that contain any pixel of a matching object."""
    g = CANVAS // patch_size
    hit = set()
    for obj in scene.objects:
        if not predicate(obj):
            continue
        m = object_mask(obj).reshape(g, patch_size, g, patch_size).any(axis=(1, 3))
        hit.update(int(i) for i in np.flatnonzero(m.reshape(-1)))
    return sorted(hit)


def _phrase(obj):
    return f"a {obj.color} {obj.shape}"


def describe_objects(scene):
    parts = [_phrase(o) for o in scene.sorted_objects()]
    if len(parts) == 1:
        return parts[0]
    return " , ".join(parts[:-1]) + " and " + parts[-1]


def caption(scene, seed):
    """Templated caption naming every object, in grid order."""
    if not scene.objects:
        raise ValidationError("cannot caption an empty scene")
    rng = np.random.default_rng(seed)
    template = CAPTION_TEMPLATES[int(rng.integers(len(CAPTION_TEMPLATES)))]
    return template.format(objs=describe_objects(scene))


# -- instruction dialogues --------------------------------------------------

@dataclass
class DialogueSample:
    image: np.ndarray
    turns: list  # [(query_text, response_text), ...]
    scene: SceneSpec = None


def answer_existence(scene, color, shape):
    return "yes ." if any(o.color == color and o.shape == shape for o in scene.objects) else "no ."


def answer_count(scene):
    return f"{NUMBER_WORDS[len(scene.objects)]} ."


def answer_color(scene, shape):
    matches = [o.color for o in scene.objects if o.shape == shape]
    if len(matches) != 1:
        raise ValidationError(f"colour of {shape!r} is ambiguous in this scene")
    return f"{matches[0]} ."


def _questions(scene, rng):
    """All candidate (query, answer) pairs by question family."""
    present = sorted({(o.color, o.shape) for o in scene.objects})
    absent = [(c, s) for c in COLORS for s in SHAPES if (c, s) not in present]
    if rng.random() < 0.5 or not absent:
        c, s = present[int(rng.integers(len(present)))]
    else:
        c, s = absent[int(rng.integers(len(absent)))]
    families = {
        "exist": (f"is there a {c} {s} ?", answer_existence(scene, c, s)),
        "count": ("how many shapes are there ?", answer_count(scene)),
    }
    unique = [s for s in SHAPES if sum(o.shape == s for o in scene.objects) == 1]
    if unique:
        s = unique[int(rng.integers(len(unique)))]
        families["color"] = (f"what color is the {s} ?", answer_color(scene, s))
    return families


def make_instructions(scene, seed):
    """One or two question/answer turns whose answers are read off the scene."""
    rng = np.random.default_rng(seed)
    families = _questions(scene, rng)
    names = sorted(families)
    n_turns = 1 + int(rng.integers(2))
    picked = rng.permutation(len(names))[:n_turns]
    turns = [families[names[i]] for i in picked]
    return DialogueSample(image=render(scene), turns=turns, scene=scene)


# -- scene enumeration and splits --------------------------------------------

def all_scenes():
    """Every valid scene with 1-3 objects, in a fixed canonical order."""
    kinds = [(s, c) for s in SHAPES for c in COLORS]
    scenes = []
    for k in (1, 2, 3):
        for cells in itertools.combinations(range(GRID * GRID), k):
            for combo in itertools.product(kinds, repeat=k):
                scenes.append(SceneSpec(tuple(SceneObject(s, c, cell) for (s, c), cell in zip(combo, cells))))
    return scenes


def fraction_size(n, fraction):
    return max(1, int(math.floor(fraction * n + 1e-9)))


def build_splits(n_pretrain=4096, n_instruct=1024, seed=0, n_eval=512):
    """Disjoint pretrain / instruct / eval pools of distinct scenes.

    Returns ``{"pretrain": [...], "instruct_001": [...], "instruct_010": [...],
    "instruct_100": [...], "eval": [...]}``; every entry is a record dict
    without image bytes (see :func:`write_dataset`). The instruct fraction
    manifests are prefixes of one seeded shuffle of the instruct pool.
    """
    if min(n_pretrain, n_instruct, n_eval) <= 0:
        raise ConfigurationError("pool sizes must be positive")
    scenes = all_scenes()
    total = n_pretrain + n_instruct + n_eval
    if total > len(scenes):
        raise GenerationError(f"requested {total} distinct scenes but only {len(scenes)} exist")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(scenes))
    pools = {
        "pretrain": order[:n_pretrain],
        "instruct": order[n_pretrain:n_pretrain + n_instruct],
        "eval": order[n_pretrain + n_instruct:total],
    }
    # per-sample seeds come from one stream so captions/dialogues are reproducible
    sample_seeds = rng.integers(0, 2**31 - 1, size=total)

    def record(prefix, i, scene_idx, s):
        scene = scenes[scene_idx]
        sid = f"{prefix}-{i:05d}"
        rec = {"id": sid, "image_path": f"images/{sid}.img", "scene": scene.to_json()}
        rec["caption"] = caption(scene, int(s))
        return rec, scene

    out = {}
    pre = []
    for i, idx in enumerate(pools["pretrain"]):
        rec, _ = record("pt", i, idx, sample_seeds[i])
        rec["text"] = rec["caption"]
        pre.append(rec)
    out["pretrain"] = pre

    inst = []
    for i, idx in enumerate(pools["instruct"]):
        s = sample_seeds[n_pretrain + i]
        rec, scene = record("in", i, idx, s)
        rec["turns"] = [list(t) for t in make_instructions(scene, int(s) + 1).turns]
        rec["text"] = dialogue_text(rec["turns"])
        inst.append(rec)
    shuffle = np.random.default_rng(seed + 1).permutation(len(inst))
    shuffled = [inst[i] for i in shuffle]
    for tag, frac in FRACTIONS.items():
        out[f"instruct_{tag}"] = shuffled[:fraction_size(len(shuffled), frac)]

    ev = []
    for i, idx in enumerate(pools["eval"]):
        s = sample_seeds[n_pretrain + n_instruct + i]
        rec, scene = record("ev", i, idx, s)
        rec["turns"] = [list(t) for t in make_instructions(scene, int(s) + 1).turns]
        rec["text"] = rec["caption"]
        ev.append(rec)
    out["eval"] = ev
    return out


def dialogue_text(turns):
    return " <sep> ".join(f"{q} <sep> {r}" for q, r in turns)


# -- file formats -------------------------------------------------------------

def write_image(path, image):
    image = np.asarray(image, dtype=np.float64)
    c, h, w = image.shape
    if c != 3:
        raise ValidationError("images must have 3 channels")
    with open(path, "wb") as f:
        f.write(IMAGE_MAGIC + struct.pack("<II", h, w))
        f.write(image.astype("<f8").tobytes())


def read_image(path):
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != IMAGE_MAGIC:
        raise ValidationError(f"{path}: not a CGVLIMG0 image")
    h, w = struct.unpack("<II", raw[8:16])
    body = raw[16:]
    if len(body) != 3 * h * w * 8:
        raise ValidationError(f"{path}: truncated image payload")
    return np.frombuffer(body, dtype="<f8").reshape(3, h, w).astype(np.float64)


def manifest_bytes(records):
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in records).encode()


def write_manifest(path, records):
    Path(path).write_bytes(manifest_bytes(records))


def read_manifest(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def write_dataset(out_dir, n_pretrain=4096, n_instruct=1024, seed=0, n_eval=512):
    """Generate splits and write manifests plus one image file per sample."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    splits = build_splits(n_pretrain, n_instruct, seed, n_eval)
    seen = set()
    for name, records in splits.items():
        for rec in records:
            if rec["id"] in seen:
                continue
            seen.add(rec["id"])
            write_image(out / rec["image_path"], render(SceneSpec.from_json(rec["scene"])))
        write_manifest(out / f"{name}.jsonl", records)
    return splits


def load_image(dataset_dir, record):
    """Image for a manifest record; a missing ``image_path`` means text-only (blank)."""
    if not record.get("image_path"):
        return np.zeros((3, CANVAS, CANVAS))
    return read_image(Path(dataset_dir) / record["image_path"])
