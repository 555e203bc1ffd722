"""Pure-numpy reference implementations of the hot kernels.

These are the fallback path when numba is unavailable or disabled via
``VFXLAB_BACKEND=numpy``. Every function here must agree with its numba
twin in ``numba_impl`` to within float tolerance; the twins are compared
directly in the test suite and in ``benchmarks/bench_kernels.py``.
"""

import numpy as np


def attention_heads(q: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float) -> np.ndarray:
    """Scaled dot-product attention over a batch of heads.

    q: (H, N, D), k: (H, M, D), v: (H, M, D) -> (H, N, D).
    Softmax rows are computed with the usual max-subtraction for stability.
    """
    logits = np.matmul(q, np.swapaxes(k, 1, 2)) * q.dtype.type(scale)
    logits -= logits.max(axis=2, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=2, keepdims=True)
    return np.matmul(probs, v)


def rope_rotate(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    """Rotate interleaved 2-D pairs of x by per-token angles.

    x: (H, N, D) with D even, cos/sin: (N, D//2). Pair layout is
    (x[..., 2i], x[..., 2i+1]); the same angles apply to every head.
    """
    x1 = x[..., 0::2]
    x2 = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = x1 * cos - x2 * sin
    out[..., 1::2] = x1 * sin + x2 * cos
    return out


def block_mean(x: np.ndarray, ft: int, fh: int, fw: int) -> np.ndarray:
    """Average non-overlapping (ft, fh, fw) blocks of a (F, H, W, C) array."""
    f, h, w, c = x.shape
    blocks = x.reshape(f // ft, ft, h // fh, fh, w // fw, fw, c)
    return blocks.mean(axis=(1, 3, 5))


def block_upsample(z: np.ndarray, ft: int, fh: int, fw: int) -> np.ndarray:
    """Nearest-neighbor upsampling of a (F, H, W, C) array by (ft, fh, fw)."""
    out = np.repeat(z, ft, axis=0)
    out = np.repeat(out, fh, axis=1)
    return np.repeat(out, fw, axis=2)


def window_sums(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation of a 2-D image with a 1-D kernel.

    img: (H, W), kernel: (K,) -> (H-K+1, W-K+1). The kernel is applied
    along rows then columns (it is symmetric in the SSIM use).
    """
    kk = kernel.astype(img.dtype, copy=False)
    size = kk.shape[0]
    h, w = img.shape
    tmp = np.zeros((h, w - size + 1), dtype=img.dtype)
    for i in range(size):
        tmp += kk[i] * img[:, i : i + w - size + 1]
    out = np.zeros((h - size + 1, w - size + 1), dtype=img.dtype)
    for i in range(size):
        out += kk[i] * tmp[i : i + h - size + 1, :]
    return out
