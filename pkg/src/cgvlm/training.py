"""Run configuration, optimiser, schedule and the three training stages.

``base``  - text-only pre-training of the toy language model (the stand-in for a
            pre-trained LLM; encoder and projector untouched)
``align`` - stage 1: projector + temperature learn the CG objective, LLM frozen
``tune``  - stage 2: projector + LLM learn the response-only dialogue loss
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import FRACTIONS, SceneSpec, load_image, make_instructions, read_manifest
from .errors import ConfigurationError
from .instruct import caption_sequence, pack_dialogue, pad_batch, tune_loss
from .model import ModelConfig, VisionLanguageModel
from .objectives import cg_loss, sequence_nll
from .projector import init_projector
from .objectives import Temperature
from .vocab import is_content

STAGES = ("base", "align", "tune")
OBJECTIVES = ("cg", "gen", "con")
DEFAULT_LR = {"base": 3e-3, "align": 1e-3, "tune": 2e-5}
METRIC_FIELDS = ("step", "gen_loss", "con_loss", "cg_loss", "tau", "alpha", "lr")


@dataclass
class TrainConfig:
    stage: str = "align"
    objective: str = "cg"
    alpha: float = 1.0
    projector: str = "mlp2-gelu"
    fraction: float = 1.0
    seed: int = 0
    batch_size: int = 32
    lr: float | None = None
    warmup_ratio: float = 0.03
    epochs: int = 1
    grad_clip: float = 1.0
    symmetric: bool = False
    data_dir: str = "data"
    out_dir: str = "runs/run"
    init: str | None = None
    model: dict = field(default_factory=lambda: ModelConfig().to_dict())

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigurationError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be non-negative")
        if self.batch_size <= 0 or self.epochs <= 0:
            raise ConfigurationError("batch size and epochs must be positive")

    @property
    def base_lr(self):
        return DEFAULT_LR[self.stage] if self.lr is None else self.lr

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path, env=None):
        """Read a JSON config; ``CGVLM_SEED`` in the environment overrides ``seed``."""
        cfg = cls.from_json(Path(path).read_text())
        env = os.environ if env is None else env
        if env.get("CGVLM_SEED"):
            cfg.seed = int(env["CGVLM_SEED"])
        return cfg


def lr_schedule(step, total_steps, base_lr, warmup_ratio=0.03):
    """Linear warmup over ``ceil(warmup_ratio * total)`` steps, then cosine decay to 0."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = math.ceil(warmup_ratio * total_steps)
    if warmup and step < warmup:
        return base_lr * step / warmup
    if total_steps == warmup:
        return base_lr
    progress = (step - warmup) / (total_steps - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay (zero by default)."""

    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.weight_decay:
                p.data = p.data * (1.0 - lr * self.weight_decay)
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params, max_norm):
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


# -- data plumbing ----------------------------------------------------------

def manifest_path(data_dir, stage, fraction=1.0):
    data_dir = Path(data_dir)
    if stage in ("base", "align"):
        name = "pretrain.jsonl"
    else:
        tags = {v: k for k, v in FRACTIONS.items()}
        if fraction not in tags:
            raise ConfigurationError(f"fraction must be one of {sorted(tags)}, got {fraction}")
        name = f"instruct_{tags[fraction]}.jsonl"
    path = data_dir / name
    if not path.exists():
        raise ConfigurationError(f"missing manifest {path}")
    return path


def encode_records(vlm, data_dir, records, chunk=256):
    """Frozen encoder features (len(records), N, d_v) for a manifest's images."""
    feats = []
    for start in range(0, len(records), chunk):
        imgs = np.stack([load_image(data_dir, r) for r in records[start:start + chunk]])
        feats.append(vlm.encode(imgs))
    return np.concatenate(feats) if feats else np.zeros((0, 0, 0))


def scene_words(scene):
    """Bare ``color shape`` pairs in grid order, the kind of context a visual prefix stands in for."""
    return " ".join(f"{o.color} {o.shape}" for o in scene.sorted_objects())


def lm_corpus(records):
    """Text-only documents for language-model pre-training.

    Each scene yields its caption, the caption preceded by the scene's bare
    object words, and a dialogue whose first query carries either the caption
    or the object words. The LM so learns to read a scene from context.
    """
    docs = []
    for i, r in enumerate(records):
        scene = SceneSpec.from_json(r["scene"])
        words = scene_words(scene)
        docs.append(caption_sequence(r["caption"]))
        docs.append(caption_sequence(f"{words} {r['caption']}"))
        turns = make_instructions(scene, seed=100003 * i + 7).turns
        context = r["caption"] if i % 2 else words
        turns = [(f"{context} {turns[0][0]}", turns[0][1])] + list(turns[1:])
        packed = pack_dialogue(turns)
        packed.loss_mask[1:] = True
        docs.append(packed)
    return docs


def _batch_features(feats, idx):
    return Tensor(feats[idx])


# -- generic loop -----------------------------------------------------------

def _train_loop(vlm, cfg, n_samples, loss_fn):
    params = [t for _, t in vlm.trainable_tensors()]
    opt = AdamW(params)
    bsz = cfg.batch_size
    steps_per_epoch = math.ceil(n_samples / bsz)
    total = steps_per_epoch * cfg.epochs
    rows, step = [], 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n_samples)
        for start in range(0, n_samples, bsz):
            idx = np.sort(order[start:start + bsz])
            lr = lr_schedule(step, total, cfg.base_lr, cfg.warmup_ratio)
            for p in params:
                p.grad = None
            loss, row = loss_fn(idx)
            ad.backward(loss)
            clip_grad_norm(params, cfg.grad_clip)
            opt.step(lr)
            vlm.temperature.clamp_()
            rows.append({"step": step, **row, "lr": lr})
            step += 1
    return rows, opt, step


def write_metrics(path, rows, fields=METRIC_FIELDS):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(fields)
        for r in rows:
            w.writerow([repr(r.get(k, "")) if isinstance(r.get(k), float) else r.get(k, "") for k in fields])


def make_checkpoint(vlm, cfg, step, opt=None):
    tensors, trainable = {}, {}
    for name, t in vlm.named_tensors():
        tensors[name] = t.data.copy()
        trainable[name] = t.requires_grad
    if opt is not None:
        names = [n for n, t in vlm.named_tensors() if any(t is p for p in opt.params)]
        for name, m, v in zip(names, opt.m, opt.v):
            tensors[f"optim.m.{name}"] = m.copy()
            tensors[f"optim.v.{name}"] = v.copy()
    return Checkpoint(config=cfg.to_dict(), tensors=tensors, trainable=trainable, step=step)


def model_from_checkpoint(ckpt):
    if isinstance(ckpt, (str, Path)):
        ckpt = load_checkpoint(ckpt)
    cfg = ckpt.config
    vlm = VisionLanguageModel(ModelConfig(**cfg["model"]), projector_variant=cfg["projector"],
                              projector_seed=cfg["seed"])
    vlm.load_state({k: v for k, v in ckpt.tensors.items() if not k.startswith("optim.")})
    vlm.set_stage(None)
    return vlm


def _fresh_model(cfg):
    return VisionLanguageModel(ModelConfig(**cfg.model), projector_variant=cfg.projector, projector_seed=cfg.seed)


def _finish(vlm, cfg, rows, opt, step, name):
    ckpt = make_checkpoint(vlm, cfg, step, opt)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / f"{name}.ckpt", ckpt)
    write_metrics(out / f"{name}_metrics.csv", rows)
    vlm.set_stage(None)
    return ckpt


# -- stages -----------------------------------------------------------------

def pretrain_language_model(cfg):
    """Text-only pre-training of the toy LM on the caption/dialogue corpus."""
    if cfg.stage != "base":
        raise ConfigurationError(f"expected a 'base' config, got stage {cfg.stage!r}")
    records = read_manifest(manifest_path(cfg.data_dir, "base"))
    docs = lm_corpus(records)
    vlm = _fresh_model(cfg)
    vlm.set_stage("base")
    lm = vlm.lm

    def loss_fn(idx):
        ids, mask = pad_batch([docs[i] for i in idx])
        z = Tensor(np.zeros((len(idx), 0, lm.d)))
        loss = sequence_nll(lm, z, ids, mask)
        return loss, {"gen_loss": loss.item(), "cg_loss": loss.item()}

    rows, opt, step = _train_loop(vlm, cfg, len(docs), loss_fn)
    return _finish(vlm, cfg, rows, opt, step, "base")


def _init_from(cfg, expected_stage):
    if cfg.init:
        src = load_checkpoint(cfg.init)
        if expected_stage and src.config.get("stage") != expected_stage:
            raise ConfigurationError(
                f"init checkpoint has stage {src.config.get('stage')!r}, expected {expected_stage!r}")
        vlm = model_from_checkpoint(src)
        return vlm, src
    return _fresh_model(cfg), None


def pretrain_align(cfg, base=None):
    """Stage 1: learn projector and temperature under the CG objective.

    ``base`` (a checkpoint or path, or ``cfg.init``) supplies the pre-trained
    language model and encoder; the projector and temperature always start
    fresh from ``cfg.seed``.
    """
    if cfg.stage != "align":
        raise ConfigurationError(f"expected an 'align' config, got stage {cfg.stage!r}")
    records = read_manifest(manifest_path(cfg.data_dir, "align"))
    if base is not None:
        vlm = model_from_checkpoint(base)
    else:
        vlm, _ = _init_from(cfg, "base")
    vlm.projector = init_projector(cfg.projector, vlm.config.d_v, vlm.config.d, seed=cfg.seed)
    vlm.temperature = Temperature()
    vlm.set_stage("align")
    feats = encode_records(vlm, cfg.data_dir, records)
    caps = [caption_sequence(r["caption"]) for r in records]
    gen_weight = 0.0 if cfg.objective == "con" else 1.0
    alpha = 0.0 if cfg.objective == "gen" else cfg.alpha

    def loss_fn(idx):
        ids, mask = pad_batch([caps[i] for i in idx])
        z = vlm.project(_batch_features(feats, idx))
        rep = cg_loss(vlm.lm, z, ids, mask, is_content(ids), np.ones(len(idx), bool), alpha,
                      vlm.temperature, symmetric=cfg.symmetric, gen_weight=gen_weight)
        return rep.total, rep.row()

    rows, opt, step = _train_loop(vlm, cfg, len(records), loss_fn)
    return _finish(vlm, cfg, rows, opt, step, "align")


def finetune(cfg, align_checkpoint=None):
    """Stage 2: tune projector and language model on instruction dialogues."""
    if cfg.stage != "tune":
        raise ConfigurationError(f"expected a 'tune' config, got stage {cfg.stage!r}")
    src = align_checkpoint if align_checkpoint is not None else cfg.init
    if src is None:
        raise ConfigurationError("finetune needs a stage-1 checkpoint")
    if isinstance(src, (str, Path)):
        src = load_checkpoint(src)
    if src.config.get("stage") != "align":
        raise ConfigurationError(f"finetune expects an 'align' checkpoint, got stage {src.config.get('stage')!r}")
    records = read_manifest(manifest_path(cfg.data_dir, "tune", cfg.fraction))
    vlm = model_from_checkpoint(src)
    vlm.set_stage("tune")
    feats = encode_records(vlm, cfg.data_dir, records)
    packed = [pack_dialogue(r["turns"]) for r in records]

    def loss_fn(idx):
        z = vlm.project(_batch_features(feats, idx))
        loss = tune_loss(vlm.lm, z, [packed[i] for i in idx])
        return loss, {"gen_loss": loss.item(), "cg_loss": loss.item()}

    rows, opt, step = _train_loop(vlm, cfg, len(records), loss_fn)
    # keep the projector variant and model shape of the stage-1 run
    cfg = TrainConfig.from_dict({**cfg.to_dict(), "projector": src.config["projector"],
                                 "model": src.config["model"]})
    return _finish(vlm, cfg, rows, opt, step, "tune")
