"""Hot numeric kernels with a selectable backend.

The environment variable ``VFXLAB_BACKEND`` picks the implementation at
import time:

    auto   (default) numba if importable, else pure numpy
    numba  require the jitted kernels, fail if numba is missing
    numpy  force the pure-numpy fallback

Both implementations expose the same five functions; see
``benchmarks/bench_kernels.py`` for a side-by-side timing comparison.
"""

import os

from vfxlab.errors import ConfigError

_requested = os.environ.get("VFXLAB_BACKEND", "auto").lower()

if _requested not in ("auto", "numba", "numpy"):
    raise ConfigError(
        f"VFXLAB_BACKEND={_requested!r}; expected 'auto', 'numba', or 'numpy'"
    )

if _requested == "numpy":
    from vfxlab.kernels import numpy_impl as _impl

    BACKEND = "numpy"
else:
    try:
        from vfxlab.kernels import numba_impl as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from vfxlab.kernels import numpy_impl as _impl

        BACKEND = "numpy"

attention_heads = _impl.attention_heads
rope_rotate = _impl.rope_rotate
block_mean = _impl.block_mean
block_upsample = _impl.block_upsample
window_sums = _impl.window_sums


def warmup() -> None:
    """Pre-compile the jitted kernels (no-op on the numpy backend)."""
    if BACKEND == "numba":
        _impl.warmup()


__all__ = [
    "BACKEND",
    "attention_heads",
    "rope_rotate",
    "block_mean",
    "block_upsample",
    "window_sums",
    "warmup",
]
