"""Command-line entry point: ``seqdisent <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

import argparse
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch
import yaml

from . import __version__
from .archive import write_archive
from .datasets import generate, load_dataset, save_dataset
from .errors import ConfigError, SeqDisentError
from .metrics import JudgeConfig, load_judge, save_judge, train_judge
from .training import (PROTOCOLS, TrainConfig, evaluate, load_checkpoint, sample_generate, swap_generate,
                       train, write_report)
from .viz import save_png_grid

log = logging.getLogger("seqdisent")

SEED_ENV = "S3VAE_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def default_seed() -> int:
    value = os.environ.get(SEED_ENV)
    if value is None:
        return 0
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {value!r}")


def _prepare_dir(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise ConfigError(f"output directory {path} is not empty (use --force to reuse it)")
    path.mkdir(parents=True, exist_ok=True)


def _write_config(path: Path, config: dict) -> None:
    path.write_text(yaml.safe_dump(config, sort_keys=True))


def _sidecar(out: Path) -> Path:
    return out.with_name(out.name + ".config.yaml")


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    data = yaml.safe_load(path.read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return data


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(args) -> None:
    seed = args.seed if args.seed is not None else default_seed()
    kw = {}
    if args.kind == "shapes":
        kw = dict(size=args.size, num_identities=args.identities, two_objects=args.two_objects)
    else:
        kw = dict(num_speakers=args.speakers)
    ds = generate(args.kind, args.count, args.frames, seed, **kw)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    _write_config(_sidecar(out), {"command": "gen-data", "kind": args.kind, "count": args.count,
                                  "frames": args.frames, "seed": seed, **kw})
    print(f"wrote {len(ds)} {args.kind} sequences to {out}")


def cmd_train(args) -> None:
    file_cfg = _load_config_file(args.config)
    if "seed" not in file_cfg:
        file_cfg["seed"] = default_seed()
    for key in ("seed", "epochs", "max_steps", "batch_size", "lr"):
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            file_cfg[key] = value
    if args.lambdas is not None:
        file_cfg["lambdas"] = args.lambdas
    cfg = TrainConfig.from_dict(file_cfg)
    data = load_dataset(args.data)
    out = Path(args.out)
    _prepare_dir(out, args.force or args.resume is not None)
    resolved = {"command": "train", "data": str(args.data), "resume": args.resume, **cfg.to_dict()}
    _write_config(out / "config.yaml", resolved)
    model, runlog = train(cfg, data, out, resume=args.resume)
    _write_config(out / "config.yaml", {**resolved, "model": model.cfg.to_dict()})
    last = runlog.rows[-1] if runlog.rows else {}
    print(f"trained {len(runlog.rows)} steps; final total {last.get('total', float('nan')):.4f}; outputs in {out}")


def cmd_train_judge(args) -> None:
    data = load_dataset(args.data)
    seed = args.seed if args.seed is not None else default_seed()
    cfg = JudgeConfig(epochs=args.epochs, seed=seed, blur_sigma=args.blur)
    judge = train_judge(data, args.target, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_judge(judge, out)
    _write_config(_sidecar(out), {"command": "train-judge", "data": str(args.data), **asdict(judge.net.cfg),
                                  "heldout_acc": judge.heldout_acc})
    print(f"judge[{args.target}] held-out accuracy {judge.heldout_acc:.4f} -> {out}")


def cmd_eval(args) -> None:
    for p in (args.ckpt, args.data):
        if not Path(p).exists():
            raise FileNotFoundError(f"file not found: {p}")
    judge = None
    if args.protocol != "verify":
        if args.judge is None:
            raise ConfigError(f"--judge is required for protocol {args.protocol}")
        judge = load_judge(args.judge)
    model, _ = load_checkpoint(args.ckpt)
    data = load_dataset(args.data)
    seed = args.seed if args.seed is not None else default_seed()
    report = evaluate(model, data, args.protocol, judge, seed=seed)
    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(out, report, protocol=args.protocol, seed=seed, checkpoint=str(args.ckpt), data=str(args.data))
    _write_config(_sidecar(out), {"command": "eval", "ckpt": str(args.ckpt), "judge": args.judge,
                                  "data": str(args.data), "protocol": args.protocol, "seed": seed})
    print(out.read_text(), end="")


def _save_generated(out: Path, seqs: np.ndarray, meta: dict, extra_arrays: dict | None = None) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    write_archive(out, {"data": seqs.astype(np.float32), **(extra_arrays or {})}, meta, "generated/1")
    save_png_grid(seqs, out.with_suffix(".png"))
    _write_config(_sidecar(out), meta)


def cmd_swap(args) -> None:
    model, _ = load_checkpoint(args.ckpt)
    data = load_dataset(args.data)
    for name, idx in (("content", args.content), ("motion", args.motion)):
        if not 0 <= idx < len(data):
            raise ConfigError(f"--{name} index {idx} out of range for {len(data)} sequences")
    gen = swap_generate(model, data.data[args.content], data.data[args.motion])
    strip = np.stack([data.data[args.content], data.data[args.motion], gen])
    _save_generated(Path(args.out), gen[None], {"command": "swap", "ckpt": str(args.ckpt), "data": str(args.data),
                                                "content": args.content, "motion": args.motion})
    save_png_grid(strip, Path(args.out).with_suffix(".png"))
    print(f"wrote swapped sequence to {args.out}")


def cmd_sample(args) -> None:
    model, meta = load_checkpoint(args.ckpt)
    seed = args.seed if args.seed is not None else default_seed()
    T = args.frames
    gen, latents = sample_generate(model, args.fix, args.count, T, torch.Generator().manual_seed(seed))
    _save_generated(Path(args.out), gen,
                    {"command": "sample", "ckpt": str(args.ckpt), "fix": args.fix, "count": args.count,
                     "frames": T, "seed": seed},
                    {k: v.astype(np.float32) for k, v in latents.items()})
    print(f"wrote {args.count} sampled sequences to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="seqdisent", description="Disentangled sequential VAE toolkit")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--kind", choices=("shapes", "tones"), required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--frames", type=int, default=None)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--identities", type=int, default=4)
    g.add_argument("--speakers", type=int, default=5)
    g.add_argument("--two-objects", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", default=None)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    t.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--lambdas", type=float, nargs=3, default=None, metavar=("SCC", "DFP", "MI"))
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=cmd_train)

    j = sub.add_parser("train-judge", help="train a judge classifier")
    j.add_argument("--data", required=True)
    j.add_argument("--target", choices=("static", "dynamic"), required=True)
    j.add_argument("--out", required=True)
    j.add_argument("--epochs", type=int, default=12)
    j.add_argument("--seed", type=int, default=None)
    j.add_argument("--blur", type=float, default=0.0, help="max Gaussian blur sigma for training augmentation (video)")
    j.set_defaults(func=cmd_train_judge)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--judge", default=None)
    e.add_argument("--data", required=True)
    e.add_argument("--protocol", choices=PROTOCOLS, required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--seed", type=int, default=None)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("swap", help="swap static/dynamic codes between two sequences")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--content", type=int, required=True)
    s.add_argument("--motion", type=int, required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_swap)

    m = sub.add_parser("sample", help="sample sequences from the priors")
    m.add_argument("--ckpt", required=True)
    m.add_argument("--fix", choices=("static", "dynamic", "none"), required=True)
    m.add_argument("--count", type=int, required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--frames", type=int, default=8)
    m.add_argument("--seed", type=int, default=None)
    m.set_defaults(func=cmd_sample)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command == "gen-data" and args.frames is None:
        args.frames = 8 if args.kind == "shapes" else 20
    try:
        args.func(args)
    except (SeqDisentError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"seqdisent {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
