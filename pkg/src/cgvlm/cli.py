"""``cgvlm`` command line: data generation, the two training stages, eval and ablations."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .data import write_dataset
from .errors import ConfigurationError
from .evaluation import diagnose, evaluate
from .experiments import ABLATIONS, DESK, ablate
from .training import TrainConfig, finetune, pretrain_align, pretrain_language_model


def _seed(default):
    env = os.environ.get("CGVLM_SEED")
    return int(env) if env else default


def cmd_gen_data(args):
    write_dataset(args.out, n_pretrain=args.pretrain, n_instruct=args.instruct, n_eval=args.eval,
                  seed=_seed(args.seed))
    print(f"wrote dataset to {args.out}")


def _config(args, stage):
    cfg = TrainConfig.load(args.config)
    if cfg.stage != stage:
        raise ConfigurationError(f"config stage is {cfg.stage!r}, this command needs {stage!r}")
    return cfg


def cmd_base(args):
    cfg = _config(args, "base")
    pretrain_language_model(cfg)
    print(f"wrote {Path(cfg.out_dir) / 'base.ckpt'}")


def cmd_pretrain(args):
    cfg = _config(args, "align")
    if args.init:
        cfg.init = args.init
    pretrain_align(cfg)
    print(f"wrote {Path(cfg.out_dir) / 'align.ckpt'}")


def cmd_finetune(args):
    cfg = _config(args, "tune")
    finetune(cfg, load_checkpoint(args.init))
    print(f"wrote {Path(cfg.out_dir) / 'tune.ckpt'}")


def cmd_eval(args):
    out = args.out or str(Path(args.ckpt).parent)
    m = evaluate(load_checkpoint(args.ckpt), args.data, manifest=args.manifest, out_dir=out,
                 limit=args.limit)
    for k, v in m.items():
        print(f"{k}\t{v:.4f}")


def cmd_diagnose(args):
    report, maps = diagnose(load_checkpoint(args.ckpt), args.data, args.out, manifest=args.manifest,
                            n_maps=args.maps)
    print(f"i2t={report.i2t:.4f} t2i={report.t2i:.4f} margin={report.margin:.4f}; "
          f"{len(maps)} similarity maps in {args.out}")


def cmd_ablate(args):
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [_seed(0) + i for i in range(3)]
    ablate(args.kind, args.root, seeds=seeds, protocol=DESK)


def build_parser():
    p = argparse.ArgumentParser(prog="cgvlm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write the synthetic shapes dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--pretrain", type=int, default=4096)
    g.add_argument("--instruct", type=int, default=1024)
    g.add_argument("--eval", type=int, default=512)
    g.set_defaults(fn=cmd_gen_data)

    b = sub.add_parser("base", help="text-only pre-training of the toy language model")
    b.add_argument("--config", required=True)
    b.set_defaults(fn=cmd_base)

    a = sub.add_parser("pretrain", help="stage 1: align the projector")
    a.add_argument("--config", required=True)
    a.add_argument("--init", help="base language-model checkpoint (overrides the config)")
    a.set_defaults(fn=cmd_pretrain)

    f = sub.add_parser("finetune", help="stage 2: instruction tuning")
    f.add_argument("--config", required=True)
    f.add_argument("--init", required=True, help="stage-1 checkpoint")
    f.set_defaults(fn=cmd_finetune)

    for name, fn, help_ in (("eval", cmd_eval, "answer accuracy and retrieval metrics"),
                            ("diagnose", cmd_diagnose, "alignment report and similarity maps")):
        e = sub.add_parser(name, help=help_)
        e.add_argument("--ckpt", required=True)
        e.add_argument("--data", default="data")
        e.add_argument("--manifest", default="eval.jsonl")
        e.add_argument("--out", required=name == "diagnose")
        if name == "eval":
            e.add_argument("--limit", type=int)
        else:
            e.add_argument("--maps", type=int, default=4)
        e.set_defaults(fn=fn)

    ab = sub.add_parser("ablate", help="scripted desk-scale ablation over seeds")
    ab.add_argument("kind", choices=sorted(ABLATIONS))
    ab.add_argument("--root", default="runs/ablate")
    ab.add_argument("--seeds", help="comma-separated seeds (default: three from CGVLM_SEED or 0)")
    ab.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"cgvlm: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
