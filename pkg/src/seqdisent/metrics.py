"""Judge classifiers and the evaluation suite (Acc, IS, H(y), H(y|x), EER)."""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.special import xlogy

from .archive import read_archive, write_archive
from .datasets import SequenceDataset
from .errors import ConfigError, MetricInvalidError, PreconditionError
from .model import FrameEncoder, ModelConfig, SegmentEncoder

log = logging.getLogger(__name__)

JUDGE_GATE = 0.95
JUDGE_KIND = "judge/1"


# -- prediction-table metrics ---------------------------------------------

def _check_table(probs) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise PreconditionError("expected a non-empty [num_samples, num_classes] probability table")
    return probs


def inter_entropy(probs) -> float:
    """H(y) of the marginal label distribution p(y) = mean_x p(y|x)."""
    p_y = _check_table(probs).mean(axis=0)
    return float(-xlogy(p_y, p_y).sum())


def intra_entropy(probs) -> float:
    """Mean over samples of H(y|x)."""
    probs = _check_table(probs)
    return float(-xlogy(probs, probs).sum(axis=1).mean())


def inception_score(probs) -> float:
    """exp(E_x KL(p(y|x) || p(y)))."""
    probs = _check_table(probs)
    if probs.shape[0] < 2:
        raise PreconditionError("inception score needs at least two samples")
    p_y = probs.mean(axis=0)
    kl = (xlogy(probs, probs) - xlogy(probs, np.broadcast_to(p_y, probs.shape))).sum(axis=1)
    return float(np.exp(kl.mean()))


@dataclass
class JudgeReport:
    acc: float
    is_score: float
    inter_entropy: float
    intra_entropy: float
    num_classes: int
    count: int
    protocol: str = ""
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("extra"))
        return d


@dataclass
class VerificationReport:
    eer: float
    threshold_at_eer: float
    positive_pairs: int
    negative_pairs: int

    def as_dict(self) -> dict:
        return asdict(self)


def equal_error_rate(scores, same: np.ndarray) -> VerificationReport:
    """EER where accepting means ``score >= threshold``.

    FAR (negatives accepted) and FRR (positives rejected) are evaluated at
    every distinct score; the crossing is linearly interpolated between the
    two adjacent thresholds. Only the order of scores matters.
    """
    scores = np.asarray(scores, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    if scores.shape != same.shape or scores.ndim != 1:
        raise PreconditionError("scores and labels must be 1-D and of equal length")
    n_pos, n_neg = int(same.sum()), int((~same).sum())
    if n_pos == 0 or n_neg == 0:
        raise PreconditionError("EER needs both same- and different-identity pairs")
    thresholds = np.unique(scores)
    # counts of scores strictly below each threshold
    pos_sorted, neg_sorted = np.sort(scores[same]), np.sort(scores[~same])
    frr = np.searchsorted(pos_sorted, thresholds, side="left") / n_pos
    far = 1.0 - np.searchsorted(neg_sorted, thresholds, side="left") / n_neg
    thresholds = np.append(thresholds, np.inf)
    frr = np.append(frr, 1.0)
    far = np.append(far, 0.0)
    diff = far - frr  # non-increasing
    i = int(np.argmax(diff <= 0))
    if diff[i] == 0 or i == 0:
        return VerificationReport(float(far[i]), float(thresholds[i]), n_pos, n_neg)
    w = diff[i - 1] / (diff[i - 1] - diff[i])
    eer = far[i - 1] + w * (far[i] - far[i - 1])
    t0, t1 = thresholds[i - 1], thresholds[i]
    thr = t0 + w * (t1 - t0) if np.isfinite(t1) else t0
    return VerificationReport(float(eer), float(thr), n_pos, n_neg)


def cosine_trials(vectors: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cosine similarity and same-identity flag for every unordered pair."""
    v = np.asarray(vectors, dtype=np.float64)
    v = v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-12)
    i, j = np.triu_indices(len(v), k=1)
    scores = np.einsum("nd,nd->n", v[i], v[j])
    labels = np.asarray(labels)
    return scores, labels[i] == labels[j]


# -- judge classifier --------------------------------------------------------

@dataclass
class JudgeConfig:
    target: str = "static"  # "static" | "dynamic"
    modality: str = "video"
    image_size: int = 32
    channels: int = 1
    num_features: int = 80
    enc_channels: list | None = None
    feature_dim: int = 64
    hidden: int = 64
    num_classes: int = 4
    epochs: int = 8
    batch_size: int = 32
    lr: float = 1e-3
    holdout: float = 0.2
    seed: int = 0
    temporal_diff: bool | None = None  # add x_t - x_{t-1} as input channels; default: dynamic target only
    blur_sigma: float = 0.0  # video only: train on copies blurred with sigma ~ U(0, blur_sigma) pixels

    @property
    def uses_diff(self) -> bool:
        return self.target == "dynamic" if self.temporal_diff is None else bool(self.temporal_diff)

    def encoder_config(self) -> ModelConfig:
        if self.modality == "video":
            enc = self.enc_channels
            if enc is None:
                n = int(round(np.log2(self.image_size / 4)))
                enc = [16 * 2 ** i for i in range(n)]
            chans = self.channels * (2 if self.uses_diff else 1)
            return ModelConfig(modality="video", image_size=self.image_size, channels=chans,
                               feature_dim=self.feature_dim, enc_channels=list(enc), dec_channels=None)
        nf = self.num_features * (2 if self.uses_diff else 1)
        return ModelConfig(modality="audio", num_features=nf, feature_dim=self.feature_dim,
                           audio_hidden=2 * self.hidden)


class JudgeNet(nn.Module):
    """Frame encoder + bidirectional LSTM; pooled head for static labels, per-step head for dynamic."""

    def __init__(self, cfg: JudgeConfig):
        super().__init__()
        if cfg.target not in ("static", "dynamic"):
            raise ConfigError(f"unknown judge target {cfg.target!r}")
        self.cfg = cfg
        ecfg = cfg.encoder_config()
        self.encoder = FrameEncoder(ecfg) if cfg.modality == "video" else SegmentEncoder(ecfg)
        self.rnn = nn.LSTM(cfg.feature_dim, cfg.hidden, batch_first=True, bidirectional=True)
        self.head = nn.Linear(2 * cfg.hidden, cfg.num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.cfg.uses_diff:
            diff = torch.cat([torch.zeros_like(x[:, :1]), x[:, 1:] - x[:, :-1]], dim=1)
            diff[:, 0] = diff[:, 1] if x.shape[1] > 1 else diff[:, 0]
            x = torch.cat([x, diff], dim=2)
        h, _ = self.rnn(self.encoder(x))
        if self.cfg.target == "static":
            return self.head(h.mean(dim=1))
        return self.head(h)


class Judge:
    def __init__(self, net: JudgeNet, heldout_acc: float, gate: float = JUDGE_GATE):
        self.net = net
        self.heldout_acc = float(heldout_acc)
        self.gate = gate

    @property
    def target(self) -> str:
        return self.net.cfg.target

    @property
    def num_classes(self) -> int:
        return self.net.cfg.num_classes

    @property
    def gated(self) -> bool:
        return self.heldout_acc >= self.gate

    def require_gate(self) -> None:
        if not self.gated:
            raise MetricInvalidError(
                f"judge held-out accuracy {self.heldout_acc:.4f} is below the {self.gate:.2f} gate;"
                " metrics computed with it would be meaningless")

    @torch.no_grad()
    def predict_proba(self, data, batch_size: int = 64) -> np.ndarray:
        """[N, T, ...] -> [N, K] (static) or [N, T, K] (dynamic) probabilities."""
        self.net.eval()
        data = torch.as_tensor(np.asarray(data, dtype=np.float32))
        out = [F.softmax(self.net(data[i:i + batch_size]), dim=-1) for i in range(0, len(data), batch_size)]
        return torch.cat(out).double().numpy()

    def labels_of(self, dataset: SequenceDataset) -> np.ndarray:
        return dataset.static_labels if self.target == "static" else dataset.dynamic_labels


def gaussian_blur(x: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Blur frames [B, T, C, H, W] with one isotropic sigma per sequence (separable, zero padded)."""
    B, T, C, H, W = x.shape
    radius = 3
    offsets = torch.arange(-radius, radius + 1, dtype=x.dtype)
    k = torch.exp(-0.5 * (offsets[None] / sigma.clamp(min=1e-3)[:, None].to(x.dtype)) ** 2)
    k = k / k.sum(1, keepdim=True)  # [B, K]
    frames = x.reshape(1, B * T * C, H, W)
    kk = k.repeat_interleave(T * C, dim=0)
    out = F.conv2d(frames, kk[:, None, None, :], padding=(0, radius), groups=B * T * C)
    out = F.conv2d(out, kk[:, None, :, None], padding=(radius, 0), groups=B * T * C)
    return out.reshape(B, T, C, H, W)


def _accuracy(judge: Judge, data, labels) -> float:
    pred = judge.predict_proba(data).argmax(-1)
    return float((pred == labels).mean())


def train_judge(dataset: SequenceDataset, target: str = "static", cfg: JudgeConfig | None = None,
                enforce_gate: bool = True) -> Judge:
    """Fit a judge on a labeled dataset; raises MetricInvalidError below the gate."""
    if cfg is None:
        cfg = JudgeConfig()
    cfg.target = target
    cfg.modality = "video" if dataset.is_video else "audio"
    if dataset.is_video:
        cfg.channels, cfg.image_size = dataset.frame_shape[0], dataset.frame_shape[1]
    else:
        cfg.num_features = dataset.frame_shape[0]
    cfg.num_classes = dataset.num_static if target == "static" else dataset.num_dynamic
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(dataset))
    n_hold = max(1, int(round(cfg.holdout * len(dataset))))
    hold, train = perm[:n_hold], perm[n_hold:]
    labels = dataset.static_labels if target == "static" else dataset.dynamic_labels
    x_all = torch.as_tensor(dataset.data)
    y_all = torch.as_tensor(labels)
    net = JudgeNet(cfg)
    judge = Judge(net, 0.0)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    best_acc, best_state = -1.0, None
    blur_gen = torch.Generator().manual_seed(cfg.seed)
    for epoch in range(cfg.epochs):
        net.train()
        order = rng.permutation(train)
        for s in range(0, len(order), cfg.batch_size):
            idx = torch.as_tensor(order[s:s + cfg.batch_size])
            if len(idx) < 2:
                continue
            xb = x_all[idx]
            if cfg.blur_sigma > 0 and cfg.modality == "video":
                xb = gaussian_blur(xb, torch.rand(len(idx), generator=blur_gen) * cfg.blur_sigma)
            logits = net(xb)
            loss = F.cross_entropy(logits.reshape(-1, cfg.num_classes), y_all[idx].reshape(-1))
            opt.zero_grad()
            loss.backward()
            opt.step()
        acc = _accuracy(judge, dataset.data[hold], labels[hold])
        log.info("judge[%s] epoch %d held-out acc %.4f", target, epoch, acc)
        if acc > best_acc:
            best_acc = acc
            best_state = {k: v.clone() for k, v in net.state_dict().items()}
    net.load_state_dict(best_state)
    judge.heldout_acc = best_acc
    if enforce_gate:
        judge.require_gate()
    return judge


def save_judge(judge: Judge, path) -> None:
    arrays = {k: v.detach().cpu().numpy() for k, v in judge.net.state_dict().items()}
    meta = {"config": asdict(judge.net.cfg), "heldout_acc": judge.heldout_acc, "gate": judge.gate}
    write_archive(path, arrays, meta, JUDGE_KIND)


def load_judge(path) -> Judge:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"judge file not found: {path}")
    arrays, meta = read_archive(path, JUDGE_KIND)
    net = JudgeNet(JudgeConfig(**meta["config"]))
    net.load_state_dict({k: torch.as_tensor(v) for k, v in arrays.items()})
    return Judge(net, meta["heldout_acc"], meta.get("gate", JUDGE_GATE))


# -- generation-based protocols ----------------------------------------------

@torch.no_grad()
def swap_generate_batch(model, data: torch.Tensor, fixed: str, generator: torch.Generator | None = None):
    """Keep one factor inferred from real data (posterior mean), sample the other from its prior."""
    model.eval()
    q_f, q_t = model.infer(model.encode_frames(data))
    B, T = data.shape[:2]
    if fixed == "static":
        z_f, z_t = q_f.mean, model.sample_prior(B, T, generator, like=q_t.mean)
    elif fixed == "dynamic":
        z_f, z_t = model.sample_static_prior(B, generator).to(q_f.mean.dtype), q_t.mean
    else:
        raise ConfigError(f"fixed must be 'static' or 'dynamic', got {fixed!r}")
    return model.decode(z_f, z_t)


def swap_accuracy(model, judge: Judge, dataset: SequenceDataset, fixed: str,
                  generator: torch.Generator | None = None, batch_size: int = 64) -> JudgeReport:
    """Agreement of judge labels between real sequences and their swapped generations.

    The judge must target the fixed factor. Also reports IS / H(y) / H(y|x)
    on the generated set.
    """
    judge.require_gate()
    if judge.target != fixed:
        raise ConfigError(f"a {judge.target} judge cannot score the swap-{fixed} protocol")
    data = torch.as_tensor(dataset.data)
    generated = torch.cat([swap_generate_batch(model, data[i:i + batch_size], fixed, generator)
                           for i in range(0, len(data), batch_size)])
    p_real = judge.predict_proba(dataset.data)
    p_gen = judge.predict_proba(generated.float().numpy())
    acc = float((p_real.argmax(-1) == p_gen.argmax(-1)).mean())
    table = p_gen.reshape(-1, p_gen.shape[-1])
    return JudgeReport(acc=acc, is_score=inception_score(table), inter_entropy=inter_entropy(table),
                       intra_entropy=intra_entropy(table), num_classes=judge.num_classes,
                       count=int(table.shape[0]), protocol=f"swap-{fixed}")


@torch.no_grad()
def latent_means(model, dataset: SequenceDataset, batch_size: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means: z_f [N, d_zf] and time-averaged z_t [N, d_zt]."""
    model.eval()
    data = torch.as_tensor(dataset.data)
    fs, ts = [], []
    for i in range(0, len(data), batch_size):
        q_f, q_t = model.infer(model.encode_frames(data[i:i + batch_size].to(model.prior_head.weight.dtype)))
        fs.append(q_f.mean)
        ts.append(q_t.mean.mean(dim=1))
    return torch.cat(fs).double().numpy(), torch.cat(ts).double().numpy()


def speaker_verification(model, dataset: SequenceDataset) -> dict:
    z_f, z_dyn = latent_means(model, dataset)
    out = {}
    for name, vecs in (("z_f", z_f), ("z_dyn", z_dyn)):
        scores, same = cosine_trials(vecs, dataset.static_labels)
        out[name] = equal_error_rate(scores, same)
    return out
