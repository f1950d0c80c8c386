import numpy as np
from PIL import Image


def sequence_grid(seqs: np.ndarray, pad: int = 1) -> np.ndarray:
    """Tile sequences into a uint8 image: one row per sequence, one column per frame.

    Video [N, T, C, H, W] -> frames side by side; features [N, T, F] -> one
    spectrogram strip (F x T, low bins at the bottom) per sequence.
    """
    seqs = np.asarray(seqs, dtype=np.float64)
    if seqs.ndim == 3:
        lo, hi = seqs.min(), seqs.max()
        strips = (seqs - lo) / (hi - lo) if hi > lo else np.zeros_like(seqs)
        tiles = strips.transpose(0, 2, 1)[:, ::-1, :]
        N, h, w = tiles.shape
        out = np.ones((N * (h + pad) + pad, w + 2 * pad))
        for n in range(N):
            out[pad + n * (h + pad): pad + n * (h + pad) + h, pad:pad + w] = tiles[n]
        return (out * 255).round().astype(np.uint8)
    N, T, C, H, W = seqs.shape
    frames = np.clip(seqs, 0, 1)
    out = np.ones((N * (H + pad) + pad, T * (W + pad) + pad, C))
    for n in range(N):
        for t in range(T):
            y, x = pad + n * (H + pad), pad + t * (W + pad)
            out[y:y + H, x:x + W] = frames[n, t].transpose(1, 2, 0)
    out = out[..., 0] if C == 1 else out
    return (out * 255).round().astype(np.uint8)


def save_png_grid(seqs: np.ndarray, path) -> None:
    Image.fromarray(sequence_grid(seqs)).save(path)
