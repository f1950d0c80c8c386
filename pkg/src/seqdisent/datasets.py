"""Deterministic synthetic sequence datasets with ground-truth factors.

Two generators are provided:

* ``shapes`` -- video. Each identity is a procedurally drawn shape (circle,
  square, triangle, cross) at its own intensity; it moves with constant
  velocity and bounces off the borders. The per-frame dynamic label is the
  compass bin (8 directions) of the displacement that produced the frame.
* ``tones`` -- audio-like feature sequences. Each speaker is a fixed
  spectral envelope that sets the harmonic amplitudes; each sequence follows
  a random mean-reverting pitch/volume trajectory with randomly inserted
  silent segments. Features are 80-bin
  log-magnitude spectra and the dynamic label marks non-silent segments.

Identities (shape appearance, speaker profile) depend only on the identity
id, so datasets generated with different seeds share them. That is what
makes a train/test split by seed meaningful.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archive import read_archive, require, write_archive
from .errors import ConfigError, FormatError

NUM_DIRECTIONS = 8
NUM_FEATURES = 80
SHAPE_KINDS = ("circle", "square", "triangle", "cross")
DATASET_KIND = "dataset/1"


@dataclass
class Sequence:
    data: np.ndarray  # [T, C, H, W] video or [T, F] features
    static_label: int
    dynamic_labels: np.ndarray  # [T]
    seed: int

    @property
    def T(self) -> int:
        return self.data.shape[0]


@dataclass
class SequenceDataset:
    kind: str  # "shapes" | "tones"
    data: np.ndarray  # [N, T, ...] float32
    static_labels: np.ndarray  # [N] int64
    dynamic_labels: np.ndarray  # [N, T] int64
    seeds: np.ndarray  # [N] int64
    num_static: int
    num_dynamic: int
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        self.static_labels = np.asarray(self.static_labels, dtype=np.int64)
        self.dynamic_labels = np.asarray(self.dynamic_labels, dtype=np.int64)
        self.seeds = np.asarray(self.seeds, dtype=np.int64)
        n = self.data.shape[0]
        if n < 1:
            raise ConfigError("dataset must hold at least one sequence")
        if self.static_labels.shape != (n,) or self.seeds.shape != (n,):
            raise ConfigError("label/seed arrays do not match the sequence count")
        if self.dynamic_labels.shape != self.data.shape[:2]:
            raise ConfigError("dynamic_labels must have one entry per timestep")

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, i: int) -> Sequence:
        return Sequence(self.data[i], int(self.static_labels[i]), self.dynamic_labels[i], int(self.seeds[i]))

    @property
    def T(self) -> int:
        return self.data.shape[1]

    @property
    def is_video(self) -> bool:
        return self.data.ndim == 5

    @property
    def frame_shape(self) -> tuple:
        return tuple(self.data.shape[2:])

    def subset(self, idx) -> "SequenceDataset":
        idx = np.asarray(idx)
        return SequenceDataset(
            self.kind, self.data[idx], self.static_labels[idx], self.dynamic_labels[idx],
            self.seeds[idx], self.num_static, self.num_dynamic, self.seed, dict(self.params),
        )

    def manifest(self) -> dict:
        dims = dict(zip(("T", "C", "H", "W"), self.data.shape[1:])) if self.is_video else {
            "T": self.data.shape[1], "F": self.data.shape[2]}
        return {
            "kind": self.kind, "count": len(self), **{k: int(v) for k, v in dims.items()},
            "num_static": self.num_static, "num_dynamic": self.num_dynamic,
            "seed": self.seed, "params": self.params,
        }


# -- shapes ------------------------------------------------------------------

def shape_mask(kind: str, extent: int) -> np.ndarray:
    yy, xx = np.mgrid[0:extent, 0:extent].astype(np.float64)
    c = (extent - 1) / 2.0
    if kind == "circle":
        return (yy - c) ** 2 + (xx - c) ** 2 <= (extent / 2.0) ** 2 - 0.25
    if kind == "square":
        m = np.zeros((extent, extent), dtype=bool)
        m[1:-1, 1:-1] = True
        return m
    if kind == "triangle":
        # apex at the top, base along the bottom row
        return np.abs(xx - c) <= (yy + 1) / 2.0
    if kind == "cross":
        w = max(1, extent // 6)
        return (np.abs(yy - c) <= w) | (np.abs(xx - c) <= w)
    raise ConfigError(f"unknown shape kind {kind!r}")


def identity_appearance(identity: int, num_identities: int) -> tuple[str, float]:
    """Every identity gets its own intensity, so appearance differs even where shape kinds repeat."""
    kind = SHAPE_KINDS[identity % len(SHAPE_KINDS)]
    return kind, float(np.linspace(1.0, 0.4, num_identities)[identity])


def direction_bin(dx: float, dy: float) -> int:
    """Compass bin of a displacement in image coordinates (y grows downward).

    Bin 0 is east, bins increase counter-clockwise in 45 degree steps.
    """
    angle = np.arctan2(-dy, dx)
    return int(np.round(angle / (np.pi / 4))) % NUM_DIRECTIONS


def _trajectory(rng, T, lo, hi, max_speed):
    steps = [(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)]
    dx, dy = steps[rng.integers(NUM_DIRECTIONS)]
    speed = int(rng.integers(1, max_speed + 1))
    v = np.array([dx * speed, dy * speed])
    pos = rng.integers(lo, hi + 1, size=2)
    positions, velocities = [pos.copy()], []
    for _ in range(T - 1):
        for a in range(2):
            if not lo <= pos[a] + v[a] <= hi:
                v[a] = -v[a]
        pos = pos + v
        positions.append(pos.copy())
        velocities.append(v.copy())
    return np.array(positions), np.array(velocities)


def generate_shapes(count: int, T: int, size: int, num_identities: int, seed: int,
                    two_objects: bool = False, extent: int | None = None) -> SequenceDataset:
    """``extent`` is the shape's bounding-box side in pixels (default ``size // 4``)."""
    extent = size // 4 if extent is None else int(extent)
    if count < 1 or T < 2 or size < 16 or num_identities < 2:
        raise ConfigError(
            f"invalid shapes config: count={count} T={T} size={size} identities={num_identities}"
            " (need count>=1, T>=2, size>=16, identities>=2)")
    if not 3 <= extent <= size // 2:
        raise ConfigError(f"shape extent {extent} must lie in [3, {size // 2}]")
    hi = size - extent
    max_speed = max(1, size // 16)
    masks = {k: shape_mask(k, extent) for k in SHAPE_KINDS}
    data = np.zeros((count, T, 1, size, size), dtype=np.float32)
    static = np.zeros(count, dtype=np.int64)
    dynamic = np.zeros((count, T), dtype=np.int64)
    seeds = np.zeros(count, dtype=np.int64)
    root = np.random.SeedSequence(seed)
    for n, child in enumerate(root.spawn(count)):
        rng = np.random.default_rng(child)
        seeds[n] = int(child.generate_state(1)[0])
        ident = int(rng.integers(num_identities))
        kind, intensity = identity_appearance(ident, num_identities)
        mask = masks[kind]
        n_obj = 2 if two_objects else 1
        trajs = [_trajectory(rng, T, 0, hi, max_speed) for _ in range(n_obj)]
        for t in range(T):
            for positions, _ in trajs:
                x, y = positions[t]
                patch = data[n, t, 0, y:y + extent, x:x + extent]
                np.maximum(patch, mask * intensity, out=patch)
        _, vel = trajs[0]
        labels = [direction_bin(*v) for v in vel]
        dynamic[n] = [labels[0]] + labels
        static[n] = ident
    return SequenceDataset("shapes", data, static, dynamic, seeds, num_identities, NUM_DIRECTIONS, seed,
                           {"size": size, "two_objects": bool(two_objects), "extent": extent})


# -- tones -------------------------------------------------------------------

NUM_HARMONICS = 10
NUM_FORMANTS = 3
TRAJECTORY_RHO = 0.5
NOISE_FLOOR = 0.01
SILENCE_PROB = 0.25


def speaker_profile(speaker: int, voice_seed: int = 0) -> np.ndarray:
    """Spectral envelope [F] for a speaker; depends only on (speaker, voice_seed).

    Three formant-like bumps over a floor. Each harmonic takes its amplitude
    from the envelope at its own frequency, so timbre stays put while pitch moves.
    """
    rng = np.random.default_rng([voice_seed, speaker, 0x70E5])
    centers = rng.uniform(5.0, NUM_FEATURES - 5.0, NUM_FORMANTS)
    widths = rng.uniform(4.0, 12.0, NUM_FORMANTS)
    heights = rng.uniform(0.5, 3.0, NUM_FORMANTS)
    bins = np.arange(NUM_FEATURES, dtype=np.float64)
    return 0.1 + np.exp(-0.5 * ((bins[:, None] - centers) / widths) ** 2) @ heights


def tone_spectrum(profile: np.ndarray, f0: float, volume: float, noise: np.ndarray) -> np.ndarray:
    bins = np.arange(NUM_FEATURES, dtype=np.float64)
    harmonics = f0 * np.arange(1, NUM_HARMONICS + 1)
    amplitudes = np.interp(harmonics, bins, profile)
    peaks = np.exp(-0.5 * ((bins[:, None] - harmonics[None, :]) / 0.8) ** 2) @ amplitudes
    mag = volume * peaks + NOISE_FLOOR * np.abs(noise)
    return np.log1p(mag)


def _ar1(rng: np.random.Generator, T: int, mean: float, std: float, rho: float = TRAJECTORY_RHO) -> np.ndarray:
    """Stationary mean-reverting trajectory, so pitch and volume vary within a sequence, not between them."""
    out = np.empty(T)
    out[0] = mean + std * rng.standard_normal()
    innov = std * np.sqrt(1 - rho ** 2)
    for t in range(1, T):
        out[t] = mean + rho * (out[t - 1] - mean) + innov * rng.standard_normal()
    return out


def generate_tones(count: int, T: int, num_speakers: int, seed: int, voice_seed: int = 0,
                   silence_prob: float = SILENCE_PROB) -> SequenceDataset:
    if count < 1 or T < 2 or num_speakers < 2:
        raise ConfigError(
            f"invalid tones config: count={count} T={T} speakers={num_speakers}"
            " (need count>=1, T>=2, speakers>=2)")
    profiles = [speaker_profile(s, voice_seed) for s in range(num_speakers)]
    data = np.zeros((count, T, NUM_FEATURES), dtype=np.float32)
    static = np.zeros(count, dtype=np.int64)
    dynamic = np.zeros((count, T), dtype=np.int64)
    seeds = np.zeros(count, dtype=np.int64)
    root = np.random.SeedSequence(seed)
    for n, child in enumerate(root.spawn(count)):
        rng = np.random.default_rng(child)
        seeds[n] = int(child.generate_state(1)[0])
        spk = int(rng.integers(num_speakers))
        f0 = np.clip(_ar1(rng, T, 5.0, 1.0), 3.0, 7.0)
        vol = np.clip(_ar1(rng, T, 1.0, 0.25), 0.4, 1.6)
        voiced = rng.random(T) >= silence_prob
        for t in range(T):
            noise = rng.standard_normal(NUM_FEATURES)
            data[n, t] = tone_spectrum(profiles[spk], f0[t], vol[t] if voiced[t] else 0.0, noise)
        static[n] = spk
        dynamic[n] = voiced.astype(np.int64)
    return SequenceDataset("tones", data, static, dynamic, seeds, num_speakers, 2, seed,
                           {"voice_seed": voice_seed, "silence_prob": silence_prob})


# -- container ---------------------------------------------------------------

def save_dataset(dataset: SequenceDataset, path) -> None:
    arrays = {
        "data": dataset.data,
        "static_labels": dataset.static_labels,
        "dynamic_labels": dataset.dynamic_labels,
        "seeds": dataset.seeds,
    }
    write_archive(path, arrays, dataset.manifest(), DATASET_KIND)


def load_dataset(path) -> SequenceDataset:
    path = Path(path)
    arrays, meta = read_archive(path, DATASET_KIND)
    require(arrays, ("data", "static_labels", "dynamic_labels", "seeds"), path)
    for key in ("kind", "num_static", "num_dynamic", "seed"):
        if key not in meta:
            raise FormatError(f"{path}: manifest missing '{key}'")
    ds = SequenceDataset(meta["kind"], arrays["data"], arrays["static_labels"], arrays["dynamic_labels"],
                         arrays["seeds"], int(meta["num_static"]), int(meta["num_dynamic"]), int(meta["seed"]),
                         meta.get("params", {}))
    if ds.manifest()["count"] != meta.get("count", len(ds)):
        raise FormatError(f"{path}: manifest count does not match stored arrays")
    return ds


def generate(kind: str, count: int, T: int, seed: int, **kw) -> SequenceDataset:
    if kind == "shapes":
        return generate_shapes(count, T, kw.get("size", 32), kw.get("num_identities", 4), seed,
                               two_objects=kw.get("two_objects", False))
    if kind == "tones":
        return generate_tones(count, T, kw.get("num_speakers", 5), seed)
    raise ConfigError(f"unknown dataset kind {kind!r}")
