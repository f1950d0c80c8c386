"""Paired training runs comparing objective variants at desk scale."""

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .datasets import generate_shapes, generate_tones
from .metrics import JudgeConfig, train_judge
from .training import TrainConfig, evaluate, train

log = logging.getLogger(__name__)

VARIANTS = {
    "full": (1000.0, 100.0, 1.0),
    "baseline": (0.0, 0.0, 0.0),
    "no_scc": (0.0, 100.0, 1.0),
    "no_dfp": (1000.0, 0.0, 1.0),
    "no_mi": (1000.0, 100.0, 0.0),
}

# seed offsets keep train / test / judge sets disjoint draws of the same identities
_TRAIN, _TEST, _JUDGE = 10_000, 20_000, 30_000


@dataclass
class ShapesProtocol:
    n_train: int = 1000
    n_test: int = 200
    n_judge: int = 1000
    T: int = 8
    size: int = 32
    identities: int = 4
    epochs: int = 50
    grid: int = 4
    judge_epochs: int = 12
    judge_blur: float = 1.5  # blur-augmented judge tolerates the softer edges of decoded frames
    model: dict = field(default_factory=lambda: {"enc_channels": [8, 16, 32], "dec_channels": [64, 32, 16, 8]})


@dataclass
class TonesProtocol:
    n_train: int = 1000
    n_test: int = 200
    T: int = 20
    speakers: int = 5
    epochs: int = 20
    model: dict = field(default_factory=dict)


def shapes_judge(p: ShapesProtocol, target: str = "static"):
    ds = generate_shapes(p.n_judge, p.T, p.size, p.identities, _JUDGE)
    return train_judge(ds, target, JudgeConfig(epochs=p.judge_epochs, blur_sigma=p.judge_blur))


def run_shapes(variant: str, seed: int, p: ShapesProtocol, judge, fixed: str = "static") -> dict:
    train_ds = generate_shapes(p.n_train, p.T, p.size, p.identities, _TRAIN + seed)
    test_ds = generate_shapes(p.n_test, p.T, p.size, p.identities, _TEST + seed)
    cfg = TrainConfig(epochs=p.epochs, lambdas=VARIANTS[variant], seed=seed, grid=p.grid, model=dict(p.model))
    torch.manual_seed(seed)
    t0 = time.time()
    model, runlog = train(cfg, train_ds)
    elapsed = time.time() - t0
    report = evaluate(model, test_ds, f"swap-{fixed}", judge, seed=seed)
    out = {"variant": variant, "seed": seed, "train_seconds": elapsed, "eval_seconds": time.time() - t0 - elapsed,
           **report.as_dict(),
           "final_total": runlog.rows[-1]["total"]}
    log.info("shapes %s seed %d: acc %.4f (%.0fs)", variant, seed, out["acc"], elapsed)
    return out


def run_tones(variant: str, seed: int, p: TonesProtocol) -> dict:
    train_ds = generate_tones(p.n_train, p.T, p.speakers, _TRAIN + seed)
    test_ds = generate_tones(p.n_test, p.T, p.speakers, _TEST + seed)
    cfg = TrainConfig(epochs=p.epochs, lambdas=VARIANTS[variant], seed=seed, model=dict(p.model))
    torch.manual_seed(seed)
    t0 = time.time()
    model, _ = train(cfg, train_ds)
    reports = evaluate(model, test_ds, "verify")
    out = {"variant": variant, "seed": seed, "train_seconds": time.time() - t0,
           "eer_z_f": reports["z_f"].eer, "eer_z_dyn": reports["z_dyn"].eer}
    log.info("tones %s seed %d: EER z_f %.4f z_dyn %.4f", variant, seed, out["eer_z_f"], out["eer_z_dyn"])
    return out


def median_of(rows: list[dict], key: str) -> float:
    return float(np.median([r[key] for r in rows]))


def protocol_dict(p) -> dict:
    return asdict(p)
