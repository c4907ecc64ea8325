"""Command line entry: gen-data, train, eval, dump, count."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .cost import cost_report
from .data import SyntheticSpec, generate_dataset, load_dataset, query_gallery
from .masks import ReconStrategy, attention_to_mask, build_target
from .metrics import evaluate
from .model import DESK_DECODER_HIDDEN, FTN, config_for, config_from_dict, config_to_dict, embed
from .pnm import write_pgm, write_ppm
from .tensor import as_tensor, no_grad
from .train import DESK_STEPS, desk_schedule, jsonl_logger, train

logger = logging.getLogger("ftn")


class UsageError(Exception):
    pass


def _seed(value) -> int:
    if value is not None:
        return value
    env = os.environ.get("FTN_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"FTN_SEED must be an integer, got {env!r}")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}")


def _strategy(letter: str):
    if letter == "base":
        return None
    try:
        return ReconStrategy.from_letter(letter)
    except ValueError:
        raise UsageError(f"unknown strategy {letter!r}; expected a..g or base")


def _hw(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected <H>x<W>, got {text!r}")
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("extents must be positive")
    return h, w


def sidecar(ckpt) -> Path:
    """Model description stored next to a checkpoint so it can be rebuilt."""
    return Path(str(ckpt) + ".json")


def load_model(ckpt) -> tuple[FTN, dict]:
    meta = _read_json(sidecar(ckpt))
    model = FTN(config_from_dict(meta["model"]), seed=0)
    checkpoint.load(model, ckpt)
    model.eval()
    return model, meta


# subcommands ----------------------------------------------------------

def cmd_gen_data(args) -> int:
    spec = SyntheticSpec.from_json(_read_json(args.spec)) if args.spec else SyntheticSpec()
    out = generate_dataset(spec, _seed(args.seed), args.out)
    print(out)
    return 0


def run_training(data_dir, config: dict, strategy_letter: str, seed: int, out) -> dict:
    """Train on the dataset's train rows and write checkpoint, sidecar and JSONL log."""
    strategy = _strategy(strategy_letter)
    ds = load_dataset(data_dir).split("train")
    if len(ds) == 0:
        raise UsageError(f"{data_dir} has no train rows")
    num_classes = len(np.unique(ds.ids))
    model_over = {"decoder_hidden": DESK_DECODER_HIDDEN, **config.get("model", {})}
    cfg = config_for(strategy, num_classes, **model_over)
    steps = int(config.get("steps", DESK_STEPS))
    sched = {"batches_per_epoch": max(1, len(ds) // 16), **config.get("schedule", {})}
    schedule = desk_schedule(steps, **sched)
    model = FTN(cfg, seed=seed)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(str(out) + ".log.jsonl", "w") as fh:
        train(model, ds, schedule, strategy, seed=seed, steps=steps, log=jsonl_logger(fh))
    checkpoint.save(model, out)
    meta = {"model": config_to_dict(cfg), "strategy": strategy_letter, "seed": seed,
            "num_classes": num_classes}
    sidecar(out).write_text(json.dumps(meta, indent=1))
    return meta


def cmd_train(args) -> int:
    config = _read_json(args.config) if args.config else {}
    run_training(args.data, config, args.strategy, _seed(args.seed), args.out)
    print(args.out)
    return 0


def evaluate_checkpoint(data_dir, ckpt, normalize: bool = False, max_rank: int = 10):
    model, _ = load_model(ckpt)
    q, g = query_gallery(load_dataset(data_dir))
    return evaluate(embed(model, q.images), q.ids, q.cams, embed(model, g.images), g.ids, g.cams,
                    max_rank=max_rank, normalize=normalize)


def cmd_eval(args) -> int:
    res = evaluate_checkpoint(args.data, args.ckpt, args.normalize, args.max_rank)
    text = res.to_json()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(text)
    print(text)
    return 0


def dump(data_dir, ckpt, out_dir, limit: int = 8) -> Path:
    """Attention masks and branch activations as PGM, reconstructions and targets as PPM."""
    model, meta = load_model(ckpt)
    ds = load_dataset(data_dir)
    images = ds.images[:limit]
    h, w = images.shape[2:]
    out = Path(out_dir)
    for sub in ("masks", "recon", "act"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    with no_grad():
        reid = model.forward_reid(images)
        f5 = reid.stages[4]
        maps = {"stage4": reid.f4, "global": f5, "local": model.local_block(f5)}
        if reid.cfa_out is not None:
            maps["cfa"] = reid.cfa_out.attended
        masks = model.build_masks(reid.f4, h, w, reid.cfa_out)
        recon = model.forward_recon(images).recon.data if model.decoder is not None else None
        strategy = _strategy(meta.get("strategy", "base"))
        target = build_target(as_tensor(images), strategy, masks).data if strategy and recon is not None else None
    act = {k: attention_to_mask(v, h, w).data for k, v in maps.items()}
    for i in range(len(images)):
        stem = Path(ds.files[i]).stem
        write_pgm(out / "masks" / f"{stem}_gm.pgm", masks.gm)
        for name in ("pam", "cam"):
            m = masks.get(name)
            if m is not None:
                write_pgm(out / "masks" / f"{stem}_{name}.pgm", m[i])
        if recon is not None:
            write_ppm(out / "recon" / f"{stem}_recon.ppm", recon[i])
        if target is not None:
            write_ppm(out / "recon" / f"{stem}_target.ppm", target[i])
        for name, a in act.items():
            write_pgm(out / "act" / f"{stem}_{name}.pgm", a[i])
    return out


def cmd_dump(args) -> int:
    print(dump(args.data, args.ckpt, args.out, args.limit))
    return 0


def cmd_count(args) -> int:
    h, w = args.hw
    print(cost_report(args.module, args.channels, h, w).to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ftn", description="Foreground-guided Re-ID on synthetic data")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--spec", help="SyntheticSpec JSON (defaults if omitted)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train and write checkpoint + JSONL log")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help='JSON with optional "model", "schedule", "steps"')
    t.add_argument("--strategy", default="g", choices=list("abcdefg") + ["base"])
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="CMC / mAP of a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--max-rank", type=int, default=10)
    e.add_argument("--normalize", action="store_true", help="L2-normalize embeddings first")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("dump", help="mask / activation PGMs and reconstruction PPMs")
    d.add_argument("--data", required=True)
    d.add_argument("--ckpt", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--limit", type=int, default=8)
    d.set_defaults(func=cmd_dump)

    c = sub.add_parser("count", help="analytic parameter and mult-add count")
    c.add_argument("--module", required=True, choices=["cfa", "pamcam"])
    c.add_argument("--channels", required=True, type=int)
    c.add_argument("--hw", required=True, type=_hw)
    c.set_defaults(func=cmd_count)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError, OSError) as exc:
        parser.print_usage(sys.stderr)
        print(f"ftn: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
