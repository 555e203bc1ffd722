"""Deterministic linear latent codec and latent-mask derivation.

The encoder averages non-overlapping pixel blocks per channel; the decoder
nearest-neighbor upsamples. The pair is exactly lossless on videos that
are piecewise constant over blocks, which makes off-mask preservation in
the edit pipeline testable to the last ulp.

Binary pixel masks pass through the same encoder; the resulting fractional
cell values are split back into a binary latent mask by a deterministic
1-D 2-means (centers initialized at min/max, ties broken toward foreground
when the cell value is >= 0.5).
"""

import numpy as np

from vfxlab import kernels
from vfxlab.errors import ShapeError
from vfxlab.tensorio import check_mask

DEFAULT_FACTORS = (2, 4, 4)


def _check_divisible(shape, factors) -> None:
    for dim, factor, axis in zip(shape, factors, "fhw"):
        if dim % factor != 0:
            raise ShapeError(
                f"{axis}-dimension {dim} not divisible by factor {factor}"
            )


def vae_encode(video: np.ndarray, factors=DEFAULT_FACTORS) -> np.ndarray:
    """Block-average a (F, H, W[, C]) array down to the latent grid."""
    video = np.asarray(video, dtype=np.float32)
    squeeze = video.ndim == 3
    if squeeze:
        video = video[..., None]
    if video.ndim != 4:
        raise ShapeError(f"expected (F, H, W[, C]) array, got shape {video.shape}")
    _check_divisible(video.shape[:3], factors)
    latent = kernels.block_mean(video, *factors)
    return latent[..., 0] if squeeze else latent


def vae_decode(latent: np.ndarray, factors=DEFAULT_FACTORS) -> np.ndarray:
    """Nearest-neighbor upsample a latent grid back to pixel resolution."""
    latent = np.asarray(latent, dtype=np.float32)
    squeeze = latent.ndim == 3
    if squeeze:
        latent = latent[..., None]
    if latent.ndim != 4:
        raise ShapeError(f"expected (lf, lh, lw[, C]) array, got shape {latent.shape}")
    video = kernels.block_upsample(latent, *factors)
    return video[..., 0] if squeeze else video


def split_two_means(values: np.ndarray) -> np.ndarray:
    """Deterministic 1-D 2-means over flat values; returns a boolean mask.

    Centers start at min and max. A value equidistant from both centers
    goes to foreground iff it is >= 0.5. An all-equal input collapses to
    the single value's own class (>= 0.5 means foreground).
    """
    flat = values.ravel().astype(np.float64)
    lo, hi = flat.min(), flat.max()
    if lo == hi:
        return np.full(values.shape, lo >= 0.5)
    c_lo, c_hi = lo, hi
    fg = None
    for _ in range(100):
        d_lo = np.abs(flat - c_lo)
        d_hi = np.abs(flat - c_hi)
        new_fg = np.where(d_lo == d_hi, flat >= 0.5, d_hi < d_lo)
        if fg is not None and np.array_equal(new_fg, fg):
            break
        fg = new_fg
        if fg.any():
            c_hi = flat[fg].mean()
        if (~fg).any():
            c_lo = flat[~fg].mean()
    return fg.reshape(values.shape)


def latent_mask_from_pixel_mask(mask: np.ndarray, factors=DEFAULT_FACTORS) -> np.ndarray:
    """Map a binary pixel mask to a binary mask on the latent grid."""
    mask = check_mask(np.asarray(mask, dtype=np.float32))
    _check_divisible(mask.shape, factors)
    encoded = vae_encode(mask, factors)
    return split_two_means(encoded).astype(np.float32)


def pixel_mask_from_latent_mask(mask: np.ndarray, factors=DEFAULT_FACTORS) -> np.ndarray:
    """Expand a binary latent mask to pixel resolution (nearest neighbor)."""
    mask = check_mask(np.asarray(mask, dtype=np.float32))
    return vae_decode(mask, factors)
