"""Sequential VAE with a static code z_f and a chain of dynamic codes z_1..z_T.

Inference: a frame encoder produces per-step features, a forward LSTM runs
over them; its final hidden state parameterizes q(z_f | x_1:T), and its
per-step outputs feed a second LSTM that parameterizes q(z_t | x_<=t).
The dynamic prior p(z_t | z_<t) is a trainable LSTM over previous samples.
The decoder maps (z_f, z_t) to frame t independently for every t.
"""

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import torch
import torch.nn as nn

from .errors import ConfigError

LOGVAR_MIN, LOGVAR_MAX = -20.0, 20.0

_ENC_DEFAULT = (64, 128, 256, 512, 512, 512)
_DEC_TAIL = (256, 128, 128, 64)


class GaussianParams(NamedTuple):
    mean: torch.Tensor
    log_var: torch.Tensor

    @classmethod
    def from_raw(cls, raw: torch.Tensor) -> "GaussianParams":
        mean, log_var = raw.chunk(2, dim=-1)
        return cls(mean, log_var.clamp(LOGVAR_MIN, LOGVAR_MAX))

    @property
    def std(self) -> torch.Tensor:
        return torch.exp(0.5 * self.log_var)

    def log_density(self, z: torch.Tensor) -> torch.Tensor:
        """Elementwise log N(z; mean, exp(log_var)) (not summed)."""
        return -0.5 * (math.log(2 * math.pi) + self.log_var + (z - self.mean) ** 2 * torch.exp(-self.log_var))


def standard_normal(shape, like: torch.Tensor) -> GaussianParams:
    zeros = torch.zeros(shape, dtype=like.dtype, device=like.device)
    return GaussianParams(zeros, zeros.clone())


def reparameterize(p: GaussianParams, generator: torch.Generator | None = None) -> torch.Tensor:
    eps = torch.randn(p.mean.shape, generator=generator, dtype=p.mean.dtype, device=p.mean.device)
    return p.mean + p.std * eps


@dataclass
class ModelConfig:
    modality: str = "video"  # "video" | "audio"
    d_zf: int = 256
    d_zt: int = 32
    feature_dim: int = 128
    rnn_hidden: int = 256
    image_size: int = 64
    channels: int = 1
    num_features: int = 80
    audio_hidden: int = 256
    enc_channels: list | None = None
    dec_channels: list | None = None
    dfp_classes: int = 64
    dfp_hidden: int = 256
    dfp_multilabel: bool = False

    def __post_init__(self):
        if self.modality not in ("video", "audio"):
            raise ConfigError(f"unknown modality {self.modality!r}")
        for name in ("d_zf", "d_zt", "feature_dim", "rnn_hidden", "channels", "num_features",
                     "audio_hidden", "dfp_classes", "dfp_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.modality == "video":
            n = self.num_downsamples
            if self.enc_channels is None:
                self.enc_channels = list(_ENC_DEFAULT[:n])
            if self.dec_channels is None:
                self.dec_channels = [512] + list(_DEC_TAIL[len(_DEC_TAIL) - n:]) if n <= 4 else [512] * (n + 1)
            if len(self.enc_channels) != n or len(self.dec_channels) != n + 1:
                raise ConfigError(
                    f"image_size {self.image_size} needs {n} encoder and {n + 1} decoder channel entries")
            self.enc_channels = [int(c) for c in self.enc_channels]
            self.dec_channels = [int(c) for c in self.dec_channels]

    @property
    def num_downsamples(self) -> int:
        s = self.image_size
        n = int(round(math.log2(s / 4))) if s >= 8 else -1
        if n < 1 or 4 * 2 ** n != s:
            raise ConfigError(f"image_size {s} must be 4 * 2**n with n >= 1 for the conv stack to reach 1x1")
        return n

    def to_dict(self) -> dict:
        return asdict(self)


class FrameEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        layers, c = [], cfg.channels
        for out in cfg.enc_channels:
            layers += [nn.Conv2d(c, out, 4, 2, 1), nn.BatchNorm2d(out), nn.LeakyReLU(0.2)]
            c = out
        layers += [nn.Conv2d(c, cfg.feature_dim, 4, 1, 0), nn.BatchNorm2d(cfg.feature_dim), nn.Tanh()]
        self.net = nn.Sequential(*layers)
        self.input_shape = (cfg.channels, cfg.image_size, cfg.image_size)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if tuple(x.shape[-3:]) != self.input_shape:
            raise ConfigError(f"frames of shape {tuple(x.shape[-3:])} do not match encoder input {self.input_shape}")
        lead = x.shape[:-3]
        out = self.net(x.reshape(-1, *self.input_shape))
        return out.reshape(*lead, -1)


class FrameDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        chs = cfg.dec_channels
        dz = cfg.d_zf + cfg.d_zt
        layers = [nn.ConvTranspose2d(dz, chs[0], 4, 1, 0), nn.BatchNorm2d(chs[0]), nn.ReLU(),
                  nn.Upsample(scale_factor=2)]
        for i, (cin, cout) in enumerate(zip(chs[:-1], chs[1:])):
            layers += [nn.Conv2d(cin, cout, 3, 1, 1), nn.BatchNorm2d(cout), nn.ReLU()]
            if i < len(chs) - 2:
                layers.append(nn.Upsample(scale_factor=2))
        layers += [nn.Conv2d(chs[-1], cfg.channels, 1, 1, 0), nn.Sigmoid()]
        self.net = nn.Sequential(*layers)
        self.output_shape = (cfg.channels, cfg.image_size, cfg.image_size)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        lead = z.shape[:-1]
        out = self.net(z.reshape(-1, z.shape[-1], 1, 1))
        return out.reshape(*lead, *self.output_shape)


class SegmentEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(cfg.num_features, cfg.audio_hidden), nn.LeakyReLU(0.2),
                                 nn.Linear(cfg.audio_hidden, cfg.feature_dim), nn.Tanh())
        self.num_features = cfg.num_features

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.num_features:
            raise ConfigError(f"segments with {x.shape[-1]} features do not match encoder input {self.num_features}")
        return self.net(x)


class SegmentDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(cfg.d_zf + cfg.d_zt, cfg.audio_hidden), nn.ReLU(),
                                 nn.Linear(cfg.audio_hidden, cfg.num_features))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)


class SequentialVAE(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        video = cfg.modality == "video"
        self.encoder = FrameEncoder(cfg) if video else SegmentEncoder(cfg)
        self.decoder = FrameDecoder(cfg) if video else SegmentDecoder(cfg)
        self.static_rnn = nn.LSTM(cfg.feature_dim, cfg.rnn_hidden, batch_first=True)
        self.static_head = nn.Linear(cfg.rnn_hidden, 2 * cfg.d_zf)
        self.dynamic_rnn = nn.LSTM(cfg.rnn_hidden, cfg.rnn_hidden, batch_first=True)
        self.dynamic_head = nn.Linear(cfg.rnn_hidden, 2 * cfg.d_zt)
        self.prior_cell = nn.LSTMCell(cfg.d_zt, cfg.rnn_hidden)
        self.prior_head = nn.Linear(cfg.rnn_hidden, 2 * cfg.d_zt)
        self.dfp_head = nn.Sequential(nn.Linear(cfg.d_zt, cfg.dfp_hidden), nn.ReLU(),
                                      nn.Linear(cfg.dfp_hidden, cfg.dfp_classes))

    # -- inference ------------------------------------------------------------

    def encode_frames(self, x: torch.Tensor) -> torch.Tensor:
        """[B, T, *obs] -> [B, T, feature_dim]."""
        return self.encoder(x)

    def infer(self, features: torch.Tensor) -> tuple[GaussianParams, GaussianParams]:
        hidden, _ = self.static_rnn(features)
        q_f = GaussianParams.from_raw(self.static_head(hidden[:, -1]))
        dyn_hidden, _ = self.dynamic_rnn(hidden)
        q_t = GaussianParams.from_raw(self.dynamic_head(dyn_hidden))
        return q_f, q_t

    def infer_static(self, features: torch.Tensor) -> GaussianParams:
        hidden, _ = self.static_rnn(features)
        return GaussianParams.from_raw(self.static_head(hidden[:, -1]))

    def infer_dynamic(self, features: torch.Tensor) -> GaussianParams:
        return self.infer(features)[1]

    # -- prior ----------------------------------------------------------------

    def _prior_step(self, z_prev, state):
        h, c = self.prior_cell(z_prev, state)
        return GaussianParams.from_raw(self.prior_head(h)), (h, c)

    def prior_dynamic(self, z_prefix: torch.Tensor) -> GaussianParams:
        """Prior over z_t given z_1..z_{t-1}; ``z_prefix`` is [B, t-1, d_zt] (t-1 may be 0)."""
        B = z_prefix.shape[0]
        z_prev = z_prefix.new_zeros(B, self.cfg.d_zt)
        state = None
        p, state = self._prior_step(z_prev, state)
        for s in range(z_prefix.shape[1]):
            p, state = self._prior_step(z_prefix[:, s], state)
        return p

    def prior_teacher_forced(self, z: torch.Tensor) -> GaussianParams:
        """Prior parameters for every step, conditioning on the given samples [B, T, d_zt]."""
        B, T, _ = z.shape
        state, means, log_vars = None, [], []
        z_prev = z.new_zeros(B, self.cfg.d_zt)
        for t in range(T):
            p, state = self._prior_step(z_prev, state)
            means.append(p.mean)
            log_vars.append(p.log_var)
            z_prev = z[:, t]
        return GaussianParams(torch.stack(means, 1), torch.stack(log_vars, 1))

    def sample_prior(self, batch: int, T: int, generator: torch.Generator | None = None,
                     like: torch.Tensor | None = None) -> torch.Tensor:
        """Ancestral rollout z_1..z_T from the learned dynamic prior."""
        ref = like if like is not None else self.prior_head.weight
        z_prev = ref.new_zeros(batch, self.cfg.d_zt)
        state, zs = None, []
        for _ in range(T):
            p, state = self._prior_step(z_prev, state)
            z_prev = reparameterize(p, generator)
            zs.append(z_prev)
        return torch.stack(zs, 1)

    def sample_static_prior(self, batch: int, generator: torch.Generator | None = None) -> torch.Tensor:
        w = self.prior_head.weight
        return torch.randn(batch, self.cfg.d_zf, generator=generator, dtype=w.dtype, device=w.device)

    # -- generation -----------------------------------------------------------

    def decode(self, z_f: torch.Tensor, z_t: torch.Tensor) -> torch.Tensor:
        """z_f [B, d_zf], z_t [B, T, d_zt] -> per-step observation means [B, T, *obs]."""
        if z_f.shape[-1] != self.cfg.d_zf or z_t.shape[-1] != self.cfg.d_zt:
            raise ConfigError(
                f"latent dims ({z_f.shape[-1]}, {z_t.shape[-1]}) do not match config ({self.cfg.d_zf}, {self.cfg.d_zt})")
        T = z_t.shape[1]
        z = torch.cat([z_f.unsqueeze(1).expand(-1, T, -1), z_t], dim=-1)
        return self.decoder(z)

    def predict_dynamic_factor(self, z_t: torch.Tensor) -> torch.Tensor:
        if z_t.shape[-1] != self.cfg.d_zt:
            raise ConfigError(f"dynamic-factor head expects {self.cfg.d_zt}-dim codes, got {z_t.shape[-1]}")
        return self.dfp_head(z_t)

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None) -> dict:
        features = self.encode_frames(x)
        q_f, q_t = self.infer(features)
        z_f = reparameterize(q_f, generator)
        z_t = reparameterize(q_t, generator)
        p_t = self.prior_teacher_forced(z_t)
        return {
            "q_f": q_f, "q_t": q_t, "z_f": z_f, "z_t": z_t, "p_t": p_t,
            "x_hat": self.decode(z_f, z_t),
            "dfp_logits": self.predict_dynamic_factor(z_t),
        }


def video_config(image_size: int = 64, grid: int = 8, k: int = 1, **kw) -> ModelConfig:
    return ModelConfig(modality="video", image_size=image_size, dfp_classes=grid * grid,
                       dfp_multilabel=k > 1, **kw)


def audio_config(**kw) -> ModelConfig:
    kw.setdefault("d_zf", 64)
    kw.setdefault("d_zt", 64)
    return ModelConfig(modality="audio", dfp_classes=2, **kw)
