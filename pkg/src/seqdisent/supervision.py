"""Self-supervision signals: motion maps, patch pseudo-labels, shuffles, volume flags."""

from typing import Protocol

import numpy as np

from .datasets import Sequence
from .errors import ConfigError, PreconditionError

DEFAULT_GRID = 8
DEFAULT_TOPK = 1
DEFAULT_VOLUME_THRESHOLD = 0.005


class MotionBackend(Protocol):
    def __call__(self, frames: np.ndarray) -> np.ndarray: ...


def flow_proxy(frames: np.ndarray) -> np.ndarray:
    """Per-pixel motion magnitude ``|x_t - x_{t-1}|`` summed over channels.

    frames: [T, C, H, W]. Returns [T, H, W]; frame 0 reuses the map of frame 1.
    """
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise PreconditionError(f"expected frames of shape [T, C, H, W], got {frames.shape}")
    if frames.shape[0] < 2:
        raise PreconditionError("flow_proxy needs at least two frames")
    diff = np.abs(np.diff(frames.astype(np.float64), axis=0)).sum(axis=1)
    return np.concatenate([diff[:1], diff], axis=0)


def patch_means(motion: np.ndarray, grid: int) -> np.ndarray:
    T, H, W = motion.shape
    if grid < 1 or H % grid or W % grid:
        raise ConfigError(f"map of size {H}x{W} is not divisible by grid {grid}")
    ph, pw = H // grid, W // grid
    return motion.reshape(T, grid, ph, grid, pw).mean(axis=(2, 4)).reshape(T, grid * grid)


def patch_motion_labels(motion: np.ndarray, grid: int = DEFAULT_GRID, k: int = DEFAULT_TOPK) -> np.ndarray:
    """Indices of the ``k`` patches with the largest mean motion, per frame.

    Patches are numbered row-major. Ordering is by descending mean, ties go
    to the smaller index. Returns int64 [T, k].
    """
    motion = np.asarray(motion, dtype=np.float64)
    if not 1 <= k <= grid * grid:
        raise ConfigError(f"k={k} must lie in [1, {grid * grid}]")
    means = patch_means(motion, grid)
    # stable sort on the negated means keeps lower indices first among ties
    order = np.argsort(-means, axis=1, kind="stable")
    return order[:, :k].astype(np.int64)


def dataset_motion_labels(data: np.ndarray, grid: int = DEFAULT_GRID, k: int = DEFAULT_TOPK,
                          backend: MotionBackend = flow_proxy) -> np.ndarray:
    """Pseudo-labels for a whole video array [N, T, C, H, W] -> [N, T, k]."""
    return np.stack([patch_motion_labels(backend(seq), grid, k) for seq in data])


def non_identity_permutation(T: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation of range(T), conditioned on not being the identity."""
    if T < 2:
        raise PreconditionError("shuffling needs T >= 2")
    ident = np.arange(T)
    while True:
        perm = rng.permutation(T)
        if not np.array_equal(perm, ident):
            return perm


def shuffle_sequence(seq, rng: np.random.Generator):
    """Temporally shuffled copy of a Sequence (or a raw [T, ...] array).

    Labels are carried over unchanged, as the shuffled sequence only serves
    as a positive for the static-consistency triplet.
    """
    if isinstance(seq, Sequence):
        perm = non_identity_permutation(seq.T, rng)
        return Sequence(seq.data[perm], seq.static_label, seq.dynamic_labels, seq.seed)
    arr = np.asarray(seq)
    return arr[non_identity_permutation(arr.shape[0], rng)]


def volume_labels(features: np.ndarray, threshold: float = DEFAULT_VOLUME_THRESHOLD) -> np.ndarray:
    """1 where the mean energy (mean square over features) of a segment reaches ``threshold``."""
    if not np.isfinite(threshold):
        raise PreconditionError("threshold must be finite")
    features = np.asarray(features, dtype=np.float64)
    energy = np.mean(features ** 2, axis=-1)
    return (energy >= threshold).astype(np.int64)


def negative_sample(batch_size: int, anchor: int, rng: np.random.Generator) -> int:
    """Uniformly pick a batch index other than ``anchor``."""
    if batch_size < 2:
        raise PreconditionError("negative sampling needs a batch of at least 2")
    if not 0 <= anchor < batch_size:
        raise PreconditionError(f"anchor {anchor} out of range for batch of {batch_size}")
    j = int(rng.integers(batch_size - 1))
    return j + 1 if j >= anchor else j
