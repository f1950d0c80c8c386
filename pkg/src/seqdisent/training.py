"""Optimization loop, checkpoints, run logs and the generation/evaluation pipelines."""

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .archive import read_archive, write_archive
from .datasets import SequenceDataset
from .errors import ConfigError, NonFiniteLossError, PreconditionError
from .losses import (DEFAULT_LAMBDAS, DEFAULT_MARGIN, LossBreakdown, dfp_loss, elbo_terms, mi_loss,
                     scc_triplet, total_loss)
from .metrics import Judge, JudgeReport, speaker_verification, swap_accuracy
from .model import ModelConfig, SequentialVAE, audio_config, reparameterize, video_config
from .supervision import (DEFAULT_GRID, DEFAULT_TOPK, DEFAULT_VOLUME_THRESHOLD, dataset_motion_labels,
                          negative_sample, non_identity_permutation, volume_labels)

log = logging.getLogger(__name__)

CHECKPOINT_KIND = "checkpoint/1"
LOSS_FIELDS = ("recon", "kl_f", "kl_dyn", "scc", "dfp", "mi", "total")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    batch_size: int = 16
    epochs: int = 50
    lambdas: tuple = DEFAULT_LAMBDAS
    margin: float = DEFAULT_MARGIN
    seed: int = 0
    grid: int = DEFAULT_GRID
    topk: int = DEFAULT_TOPK
    volume_threshold: float = DEFAULT_VOLUME_THRESHOLD
    checkpoint_every: int = 0  # steps; 0 = only at the end
    grad_clip: float | None = None
    weight_decay: float = 0.0
    kl_warmup_steps: int = 0
    dataset_size: int | None = None  # N of the MI estimator; defaults to the training-set count
    max_steps: int | None = None
    model: dict = field(default_factory=dict)  # ModelConfig overrides

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        self.lambdas = tuple(float(v) for v in self.lambdas)
        if len(self.lambdas) != 3:
            raise ConfigError("lambdas must hold three values (scc, dfp, mi)")
        if self.lr <= 0 or self.batch_size < 2 or self.epochs < 1:
            raise ConfigError("lr must be positive, batch_size >= 2 and epochs >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"], d["lambdas"] = list(self.betas), list(self.lambdas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def desk_model_config(dataset: SequenceDataset, grid: int = DEFAULT_GRID, topk: int = DEFAULT_TOPK,
                      **overrides) -> ModelConfig:
    """Reduced-width architecture used by default at desk scale; any field can be overridden."""
    if dataset.is_video:
        C, H, W = dataset.frame_shape
        n = int(round(np.log2(H / 4)))
        kw = dict(d_zf=256, d_zt=32, feature_dim=64, rnn_hidden=64, channels=C,
                  enc_channels=[16 * 2 ** i for i in range(n)],
                  dec_channels=[16 * 2 ** (n - 1)] + [16 * 2 ** max(i, 0) for i in range(n - 2, -2, -1)],
                  dfp_hidden=64)
        kw.update(overrides)
        return video_config(image_size=H, grid=grid, k=topk, **kw)
    kw = dict(feature_dim=64, rnn_hidden=64, audio_hidden=128, dfp_hidden=64, num_features=dataset.frame_shape[0])
    kw.update(overrides)
    return audio_config(**kw)


def build_model(cfg: TrainConfig, dataset: SequenceDataset) -> SequentialVAE:
    return SequentialVAE(desk_model_config(dataset, cfg.grid, cfg.topk, **cfg.model))


def dynamic_targets(cfg: TrainConfig, dataset: SequenceDataset) -> np.ndarray:
    """Self-supervised DFP targets: motion-patch indices [N, T, k] or volume flags [N, T]."""
    if dataset.is_video:
        return dataset_motion_labels(dataset.data, cfg.grid, cfg.topk)
    return np.stack([volume_labels(seq, cfg.volume_threshold) for seq in dataset.data])


def step_rngs(seed: int, step: int) -> tuple[torch.Generator, np.random.Generator]:
    """Per-step noise sources, a pure function of (seed, step) so resumed runs replay exactly."""
    ss = np.random.SeedSequence([seed, step])
    g = torch.Generator().manual_seed(int(ss.generate_state(1, dtype=np.uint64)[0] >> 1))
    return g, np.random.default_rng(ss.spawn(1)[0])


def compute_losses(model: SequentialVAE, x: torch.Tensor, targets: torch.Tensor, cfg: TrainConfig,
                   dataset_size: int, generator: torch.Generator, rng: np.random.Generator,
                   kl_weight: float = 1.0) -> LossBreakdown:
    l_scc, l_dfp, l_mi = cfg.lambdas
    B, T = x.shape[:2]
    likelihood = "bernoulli" if model.cfg.modality == "video" else "gaussian"
    zero = x.new_zeros(())

    if l_scc:
        perms = torch.as_tensor(np.stack([non_identity_permutation(T, rng) for _ in range(B)]))
        x_pos = torch.stack([x[b, perms[b]] for b in range(B)])
        features = model.encode_frames(torch.cat([x, x_pos]))
        features, features_pos = features[:B], features[B:]
    else:
        features = model.encode_frames(x)
    q_f, q_t = model.infer(features)
    z_f = reparameterize(q_f, generator)
    z_t = reparameterize(q_t, generator)
    p_t = model.prior_teacher_forced(z_t)
    x_hat = model.decode(z_f, z_t)
    recon, kl_f, kl_dyn = elbo_terms(x, x_hat, q_f, q_t, p_t, likelihood)
    kl_f, kl_dyn = kl_weight * kl_f, kl_weight * kl_dyn

    scc = zero
    if l_scc:
        z_pos = reparameterize(model.infer_static(features_pos), generator)
        neg = torch.as_tensor([negative_sample(B, i, rng) for i in range(B)])
        scc = scc_triplet(z_f, z_pos, z_f[neg], cfg.margin)
    dfp = zero
    if l_dfp:
        dfp = dfp_loss(model.predict_dynamic_factor(z_t), targets, model.cfg.dfp_multilabel)
    mi = zero
    if l_mi:
        mi = mi_loss(z_f, q_f, z_t, q_t, dataset_size)
    return total_loss(recon, kl_f, kl_dyn, scc, dfp, mi, cfg.lambdas)


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(path, model: SequentialVAE, optimizer, step: int, cfg: TrainConfig, extra: dict | None = None):
    arrays = {f"model/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {"format": CHECKPOINT_KIND, "model_config": model.cfg.to_dict(), "train_config": cfg.to_dict(),
            "step": int(step), "rng": {"seed": cfg.seed, "next_step": int(step)}, **(extra or {})}
    if optimizer is not None:
        sd = optimizer.state_dict()
        for idx, st in sd["state"].items():
            for k, v in st.items():
                arrays[f"optim/{idx}/{k}"] = torch.as_tensor(v).detach().cpu().numpy()
        meta["optim_param_groups"] = sd["param_groups"]
    tmp = Path(str(path) + ".tmp")
    write_archive(tmp, arrays, meta, CHECKPOINT_KIND)
    tmp.replace(path)


def load_checkpoint(path, with_optimizer: bool = False):
    """Return (model, meta) or (model, optimizer, meta)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    arrays, meta = read_archive(path, CHECKPOINT_KIND)
    model = SequentialVAE(ModelConfig(**meta["model_config"]))
    state = {k[len("model/"):]: torch.as_tensor(v) for k, v in arrays.items() if k.startswith("model/")}
    dtype = next(iter(state.values())).dtype
    if dtype == torch.float64:
        model.double()
    model.load_state_dict(state)
    if not with_optimizer:
        return model, meta
    cfg = TrainConfig.from_dict(meta["train_config"])
    opt = make_optimizer(model, cfg)
    if "optim_param_groups" in meta:
        st: dict = {}
        for k, v in arrays.items():
            if k.startswith("optim/"):
                _, idx, name = k.split("/", 2)
                st.setdefault(int(idx), {})[name] = torch.as_tensor(v)
        opt.load_state_dict({"state": st, "param_groups": meta["optim_param_groups"]})
    return model, opt, meta


def make_optimizer(model, cfg: TrainConfig):
    return torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)


# -- run log -------------------------------------------------------------------

class RunLog:
    """Append-only loss history, mirrored to newline-delimited JSON when a path is given."""

    def __init__(self, path=None, seed: int = 0, config_hash: str = ""):
        self.rows: list[dict] = []
        self.path = Path(path) if path else None
        self.seed = seed
        self.config_hash = config_hash
        self.started = time.time()

    def append(self, step: int, breakdown: LossBreakdown, **extra) -> dict:
        if self.rows and step <= self.rows[-1]["step"]:
            raise ValueError("run log steps must increase")
        row = {"step": int(step), **{k: float(getattr(breakdown, k).detach()) for k in LOSS_FIELDS},
               "lambdas": list(breakdown.lambdas), "time": time.time(), **extra}
        self.rows.append(row)
        if self.path:
            with self.path.open("a") as fh:
                fh.write(json.dumps(row) + "\n")
        return row

    @property
    def wall_clock(self) -> float:
        return time.time() - self.started

    @staticmethod
    def read(path) -> list[dict]:
        return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


# -- training ------------------------------------------------------------------

def train(cfg: TrainConfig, dataset: SequenceDataset, out_dir=None, resume=None,
          model: SequentialVAE | None = None, dtype: torch.dtype = torch.float32):
    """Optimize the full objective; returns (model, runlog).

    With ``out_dir`` the run writes ``runlog.jsonl`` and
    ``checkpoint.ckpt`` (every ``checkpoint_every`` steps and at the end).
    """
    if cfg.batch_size > len(dataset):
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds dataset size {len(dataset)}")
    out_dir = Path(out_dir) if out_dir else None
    ckpt_path = out_dir / "checkpoint.ckpt" if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    start = 0
    if resume is not None:
        model, opt, meta = load_checkpoint(resume, with_optimizer=True)
        start = int(meta["step"])
    else:
        model = model or build_model(cfg, dataset)
        model.to(dtype)
        opt = make_optimizer(model, cfg)
    dtype = model.prior_head.weight.dtype
    N = cfg.dataset_size or len(dataset)
    targets = torch.as_tensor(dynamic_targets(cfg, dataset))
    data = torch.as_tensor(dataset.data).to(dtype)
    steps_per_epoch = len(dataset) // cfg.batch_size
    total = cfg.epochs * steps_per_epoch
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    runlog = RunLog(out_dir / "runlog.jsonl" if out_dir else None, cfg.seed, cfg.config_hash())
    perm_epoch, perm = -1, None
    model.train()
    for step in range(start, total):
        epoch, b = divmod(step, steps_per_epoch)
        if epoch != perm_epoch:
            perm = np.random.default_rng([cfg.seed, epoch, 7]).permutation(len(dataset))
            perm_epoch = epoch
        idx = torch.as_tensor(perm[b * cfg.batch_size:(b + 1) * cfg.batch_size])
        gen, rng = step_rngs(cfg.seed, step)
        kl_weight = min(1.0, (step + 1) / cfg.kl_warmup_steps) if cfg.kl_warmup_steps else 1.0
        losses = compute_losses(model, data[idx], targets[idx], cfg, N, gen, rng, kl_weight)
        for name in LOSS_FIELDS:
            if not torch.isfinite(getattr(losses, name)):
                raise NonFiniteLossError(name, step + 1)
        opt.zero_grad()
        losses.total.backward()
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()
        runlog.append(step + 1, losses, epoch=epoch)
        if (step + 1) % max(steps_per_epoch, 1) == 0:
            row = runlog.rows[-1]
            log.info("epoch %d step %d total %.2f recon %.2f scc %.4f dfp %.4f mi %.3f", epoch, step + 1,
                     row["total"], row["recon"], row["scc"], row["dfp"], row["mi"])
        if ckpt_path and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(ckpt_path, model, opt, step + 1, cfg)
    if ckpt_path:
        save_checkpoint(ckpt_path, model, opt, max(total, start), cfg)
    model.eval()
    return model, runlog


# -- evaluation & generation ---------------------------------------------------

PROTOCOLS = ("swap-static", "swap-dynamic", "verify")


def evaluate(model: SequentialVAE, dataset: SequenceDataset, protocol: str, judge: Judge | None = None,
             seed: int = 0) -> JudgeReport | dict:
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    if protocol == "verify":
        if dataset.is_video:
            raise ConfigError("the verify protocol needs an audio (tones) dataset")
        return speaker_verification(model, dataset)
    if not dataset.is_video:
        raise ConfigError(f"protocol {protocol} needs a video dataset")
    if judge is None:
        raise ConfigError(f"protocol {protocol} needs a judge")
    fixed = protocol.split("-", 1)[1]
    report = swap_accuracy(model, judge, dataset, fixed, torch.Generator().manual_seed(seed))
    report.extra["seed"] = seed
    return report


def format_report(report, **header) -> str:
    """Flat ``key = value`` text."""
    if isinstance(report, dict):
        items = {}
        for name, rep in report.items():
            items.update({f"{name}.{k}": v for k, v in rep.as_dict().items()})
    else:
        items = report.as_dict()
    items = {**header, **items}
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def write_report(path, report, **header) -> None:
    Path(path).write_text(format_report(report, **header))


def read_report(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


@torch.no_grad()
def swap_generate(model: SequentialVAE, content: np.ndarray, motion: np.ndarray) -> np.ndarray:
    """Decode static code of ``content`` with the dynamic codes of ``motion`` (posterior means)."""
    content, motion = np.asarray(content), np.asarray(motion)
    if content.shape != motion.shape:
        raise PreconditionError(f"sequences differ in shape: {content.shape} vs {motion.shape}")
    model.eval()
    dtype = model.prior_head.weight.dtype
    x = torch.as_tensor(np.stack([content, motion])).to(dtype)
    q_f, q_t = model.infer(model.encode_frames(x))
    return model.decode(q_f.mean[:1], q_t.mean[1:]).float().numpy()[0]


@torch.no_grad()
def sample_generate(model: SequentialVAE, fix: str, count: int, T: int,
                    generator: torch.Generator | None = None) -> tuple[np.ndarray, dict]:
    """Generate ``count`` sequences from the priors; ``fix`` shares one factor across all of them."""
    if fix not in ("static", "dynamic", "none"):
        raise ConfigError(f"fix must be static, dynamic or none, got {fix!r}")
    if count < 1 or T < 1:
        raise ConfigError("count and T must be positive")
    model.eval()
    n_f = 1 if fix == "static" else count
    n_t = 1 if fix == "dynamic" else count
    z_f = model.sample_static_prior(n_f, generator).expand(count, -1)
    z_t = model.sample_prior(n_t, T, generator).expand(count, -1, -1)
    return model.decode(z_f, z_t).float().numpy(), {"z_f": z_f.numpy(), "z_t": z_t.numpy()}
