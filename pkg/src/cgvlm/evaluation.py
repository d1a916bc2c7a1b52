"""Answer accuracy and alignment diagnostics for a trained checkpoint."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import SceneSpec, object_patch_indices, read_manifest
from .diagnostics import (AlignmentReport, contrast_score, emit_report, mean_margin,
                          retrieval_accuracy, similarity_map)
from .instruct import caption_sequence, greedy_decode, pad_batch, query_context
from .objectives import pool_descriptor, similarity_matrix
from .training import encode_records, model_from_checkpoint
from .vocab import CONCEPT_WORDS, COLORS, STOI, decode, encode, is_content

EVAL_FIELDS = ("answer_accuracy", "acc_exist", "acc_count", "acc_color", "i2t_top1", "t2i_top1",
               "mean_margin", "contrast_mean")


def _family(query):
    if query.startswith("is there"):
        return "exist"
    if query.startswith("how many"):
        return "count"
    return "color"


def answer_accuracy(vlm, records, feats, batch_size=64, transcript=None):
    """Exact-match accuracy of greedy answers, every turn scored with gold history."""
    items = []
    for r_idx, rec in enumerate(records):
        for t, (q, a) in enumerate(rec["turns"]):
            items.append((r_idx, query_context(q, rec["turns"][:t]), encode(a), _family(q), q, a))
    correct = {"exist": [], "count": [], "color": []}
    lines = []
    with ad.no_grad():
        for start in range(0, len(items), batch_size):
            chunk = items[start:start + batch_size]
            z = vlm.project(feats[[c[0] for c in chunk]])
            outs = greedy_decode(vlm.lm, z, [c[1] for c in chunk])
            for (r_idx, _, gold, fam, q, a), out in zip(chunk, outs):
                ok = out == gold
                correct[fam].append(ok)
                lines.append(f"{records[r_idx]['id']}\t{q}\t{a}\t{decode(out)}\t{int(ok)}")
    if transcript is not None:
        Path(transcript).parent.mkdir(parents=True, exist_ok=True)
        Path(transcript).write_text("id\tquery\tgold\tdecoded\tcorrect\n" + "\n".join(lines) + "\n")
    flat = [x for v in correct.values() for x in v]
    out = {"answer_accuracy": float(np.mean(flat)) if flat else 0.0}
    for fam, v in correct.items():
        out[f"acc_{fam}"] = float(np.mean(v)) if v else float("nan")
    return out


def retrieval_similarities(vlm, records, feats, batch_size=32):
    """Unscaled image-caption similarity matrices over consecutive in-batch chunks."""
    mats = []
    with ad.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start:start + batch_size]
            if len(chunk) < 2:
                continue
            ids, _ = pad_batch([caption_sequence(r["caption"]) for r in chunk])
            desc = pool_descriptor(vlm.project(feats[start:start + batch_size]))
            s = similarity_matrix(desc, vlm.lm.embed(ids), is_content(ids), 1.0)
            mats.append(s.data)
    return mats


def retrieval_metrics(mats):
    n = sum(m.shape[0] for m in mats)
    if not n:  # fewer than two records: retrieval is undefined
        return {"i2t_top1": float("nan"), "t2i_top1": float("nan"), "mean_margin": float("nan")}
    i2t = sum(retrieval_accuracy(m)[0] * m.shape[0] for m in mats) / n
    t2i = sum(retrieval_accuracy(m)[1] * m.shape[0] for m in mats) / n
    margin = sum(mean_margin(m) * m.shape[0] for m in mats) / n
    return {"i2t_top1": i2t, "t2i_top1": t2i, "mean_margin": margin}


def concept_contrast(vlm, records, feats, patch_size):
    """Mean contrast score per concept word across scenes (object vs other patches)."""
    scores = {w: [] for w in CONCEPT_WORDS}
    emb = vlm.lm.tok_emb.data
    with ad.no_grad():
        z_all = vlm.project(feats).data
    for rec, z in zip(records, z_all):
        scene = SceneSpec.from_json(rec["scene"])
        words = sorted({o.color for o in scene.objects} | {o.shape for o in scene.objects})
        smap = similarity_map(z, emb[[STOI[w] for w in words]], tokens=words)
        for col, w in enumerate(words):
            attr = "color" if w in COLORS else "shape"
            idx = object_patch_indices(scene, patch_size, lambda o: getattr(o, attr) == w)
            scores[w].append(contrast_score(smap, col, idx))
    per = {w: float(np.mean(v)) for w, v in scores.items() if v}
    return per, float(np.mean(list(per.values())))


def evaluate(ckpt, data_dir, manifest="eval.jsonl", out_dir=None, limit=None):
    """Answer accuracy, retrieval and contrast metrics; writes CSV and transcript when ``out_dir`` is set."""
    vlm = model_from_checkpoint(ckpt) if not hasattr(ckpt, "lm") else ckpt
    records = read_manifest(Path(data_dir) / manifest)
    if limit:
        records = records[:limit]
    feats = encode_records(vlm, data_dir, records)
    transcript = Path(out_dir) / "transcript.tsv" if out_dir else None
    metrics = answer_accuracy(vlm, records, feats, transcript=transcript)
    mats = retrieval_similarities(vlm, records, feats)
    metrics.update(retrieval_metrics(mats))
    per, mean = concept_contrast(vlm, records, feats, vlm.config.patch_size)
    metrics["contrast_mean"] = mean
    metrics.update({f"contrast_{w}": v for w, v in per.items()})
    if out_dir:
        write_eval_csv(Path(out_dir) / "eval_metrics.csv", metrics)
    return metrics


def write_eval_csv(path, metrics):
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = list(EVAL_FIELDS) + sorted(k for k in metrics if k not in EVAL_FIELDS)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(keys)
        w.writerow([repr(float(metrics[k])) for k in keys])


def diagnose(ckpt, data_dir, out_dir, manifest="eval.jsonl", n_maps=4, step=None):
    """Emit ``alignment_report.csv`` and a few ``simmap_<id>.pgm`` renderings."""
    vlm = model_from_checkpoint(ckpt) if not hasattr(ckpt, "lm") else ckpt
    records = read_manifest(Path(data_dir) / manifest)
    feats = encode_records(vlm, data_dir, records)
    rm = retrieval_metrics(retrieval_similarities(vlm, records, feats))
    per, _ = concept_contrast(vlm, records, feats, vlm.config.patch_size)
    report = AlignmentReport(step=int(step or 0), i2t=rm["i2t_top1"], t2i=rm["t2i_top1"],
                             margin=rm["mean_margin"], contrast=per)
    maps = {}
    with ad.no_grad():
        for rec, f in zip(records[:n_maps], feats[:n_maps]):
            ids = caption_sequence(rec["caption"]).ids
            z = vlm.project(f).data
            maps[rec["id"]] = similarity_map(z, vlm.lm.tok_emb.data[ids], is_content(ids),
                                             tokens=decode(ids).split())
    emit_report([report], out_dir, maps)
    return report, maps
