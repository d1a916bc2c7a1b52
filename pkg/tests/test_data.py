import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgvlm.data import (CAPTION_TEMPLATES, GenerationError, SceneObject, SceneSpec, all_scenes, build_splits,
                        caption, load_image, make_instructions, manifest_bytes, object_mask,
                        read_image, read_manifest, render, write_dataset, write_image)
from cgvlm.errors import ValidationError
from cgvlm.vision import blank_image
from cgvlm.vocab import COLORS, NUMBER_WORDS, SHAPES, encode


def test_empty_scene_renders_blank():
    assert np.array_equal(render(SceneSpec(())), blank_image(28, 28))


def test_render_deterministic():
    s = SceneSpec((SceneObject("triangle", "yellow", 3), SceneObject("circle", "blue", 0)))
    assert render(s).tobytes() == render(s).tobytes()


def test_single_red_circle_pixels():
    img = render(SceneSpec((SceneObject("circle", "red", 1),)))
    assert img[0].sum() > 0
    assert not img[1].any() and not img[2].any()
    m = object_mask(SceneObject("circle", "red", 1))
    assert np.all(img[0][m] == 1.0) and np.all(img[0][~m] == 0.0)


def test_shapes_fit_inside_their_cell():
    for shape in SHAPES:
        for cell in range(4):
            m = object_mask(SceneObject(shape, "red", cell))
            r, c = divmod(cell, 2)
            outside = m.copy()
            outside[r * 14:(r + 1) * 14, c * 14:(c + 1) * 14] = False
            assert m.any() and not outside.any()


def test_invalid_scenes():
    with pytest.raises(ValidationError):
        SceneSpec((SceneObject("circle", "red", 0), SceneObject("square", "blue", 0)))
    with pytest.raises(ValidationError):
        SceneSpec((SceneObject("hexagon", "red", 0),))


def test_caption_names_objects_in_grid_order():
    one = SceneSpec((SceneObject("square", "green", 2),))
    words = caption(one, 0).split()
    assert [w for w in words if w in COLORS + SHAPES] == ["green", "square"]
    two = SceneSpec((SceneObject("circle", "red", 3), SceneObject("triangle", "blue", 1)))
    words = caption(two, 5).split()
    assert [w for w in words if w in COLORS + SHAPES] == ["blue", "triangle", "red", "circle"]


def test_caption_vocabulary_and_length_exhaustive():
    longest = 0
    for scene in all_scenes():
        for seed in range(len(CAPTION_TEMPLATES) * 3):
            ids = encode(caption(scene, seed))  # raises on any out-of-vocabulary word
            longest = max(longest, len(ids))
    assert longest <= 48


def _interrogate(scene, query):
    """Brute-force answer by scanning the object list."""
    words = query.rstrip(" ?").split()
    if words[:2] == ["is", "there"]:
        color, shape = words[3], words[4]
        hit = [o for o in scene.objects if o.color == color and o.shape == shape]
        return "yes ." if hit else "no ."
    if words[:2] == ["how", "many"]:
        return NUMBER_WORDS[len(scene.objects)] + " ."
    shape = words[-1]
    return [o.color for o in scene.objects if o.shape == shape][0] + " ."


def test_dialogues_agree_with_interrogator():
    scenes = all_scenes()
    rng = np.random.default_rng(0)
    for k in range(200):
        scene = scenes[int(rng.integers(len(scenes)))]
        for q, a in make_instructions(scene, k).turns:
            assert _interrogate(scene, q) == a


def test_existence_and_count_answers():
    s = SceneSpec((SceneObject("circle", "red", 0), SceneObject("square", "red", 1), SceneObject("circle", "blue", 2)))
    assert _interrogate(s, "is there a red circle ?") == "yes ."
    found = {}
    for seed in range(50):
        for q, a in make_instructions(s, seed).turns:
            found[q] = a
    assert found["how many shapes are there ?"] == "three ."
    assert found.get("is there a red circle ?", "yes .") == "yes ."


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 7823), st.integers(0, 10**6))
def test_turn_count_and_family(idx, seed):
    scene = all_scenes()[idx]
    turns = make_instructions(scene, seed).turns
    assert 1 <= len(turns) <= 2
    assert len({q for q, _ in turns}) == len(turns)


def test_splits_contracts():
    splits = build_splits(n_pretrain=300, n_instruct=200, seed=4, n_eval=50)
    assert len(splits["instruct_100"]) == 200
    assert len(splits["instruct_010"]) == 20 and len(splits["instruct_001"]) == 2
    ids = lambda k: [r["id"] for r in splits[k]]
    assert ids("instruct_010") == ids("instruct_100")[:20]
    assert ids("instruct_001") == ids("instruct_010")[:2]
    train = set(ids("pretrain")) | set(ids("instruct_100"))
    assert not train & set(ids("eval"))
    scenes = lambda k: {str(r["scene"]) for r in splits[k]}
    assert not (scenes("pretrain") | scenes("instruct_100")) & scenes("eval")


def test_too_many_scenes():
    with pytest.raises(GenerationError):
        build_splits(n_pretrain=8000, n_instruct=10, n_eval=10)


def test_manifests_are_byte_identical():
    a = build_splits(50, 40, seed=9, n_eval=10)
    b = build_splits(50, 40, seed=9, n_eval=10)
    assert all(manifest_bytes(a[k]) == manifest_bytes(b[k]) for k in a)


def test_image_file_round_trip(tmp_path, rng):
    img = rng.random((3, 28, 28))
    write_image(tmp_path / "x.img", img)
    raw = (tmp_path / "x.img").read_bytes()
    assert raw[:8] == b"CGVLIMG0" and len(raw) == 16 + 3 * 28 * 28 * 8
    assert read_image(tmp_path / "x.img").tobytes() == img.tobytes()
    (tmp_path / "bad.img").write_bytes(raw[:-8])
    with pytest.raises(ValidationError):
        read_image(tmp_path / "bad.img")


def test_written_dataset(tiny_data):
    recs = read_manifest(tiny_data / "instruct_010.jsonl")
    assert len(recs) == 10
    img = load_image(tiny_data, recs[0])
    assert np.array_equal(img, render(SceneSpec.from_json(recs[0]["scene"])))
    assert not load_image(tiny_data, {"id": "text-only"}).any()
    for name in ("pretrain", "instruct_001", "instruct_010", "instruct_100", "eval"):
        assert (tiny_data / f"{name}.jsonl").exists()
