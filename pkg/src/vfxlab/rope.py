"""Rotary position embeddings over up to three position axes.

Each axis owns a contiguous, even-sized segment of the head dimension;
within a segment, consecutive value pairs are rotated by angles
``position * base**(-2i/segment)``. Dot products between rotated queries
and keys then depend only on per-axis position offsets. A config with all
dims on one axis gives ordinary 1-D rotary embeddings (used for text
tokens, whose positions live in their own index space).
"""

from dataclasses import dataclass

import numpy as np

from vfxlab import kernels
from vfxlab.errors import ShapeError


@dataclass(frozen=True)
class RopeConfig:
    base: float = 10000.0
    axis_dims: tuple = (8, 8, 8)

    def __post_init__(self):
        if len(self.axis_dims) != 3:
            raise ShapeError("axis_dims must name three axes (t, h, w)")
        for d in self.axis_dims:
            if d < 0 or d % 2 != 0:
                raise ShapeError(f"axis dims must be even and >= 0, got {self.axis_dims}")
        if self.dim == 0:
            raise ShapeError("at least one axis must have nonzero dims")

    @property
    def dim(self) -> int:
        return sum(self.axis_dims)


def rope_angles(positions: np.ndarray, cfg: RopeConfig) -> np.ndarray:
    """Per-token rotation angles, (N, dim // 2) float64."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ShapeError(f"positions must be (N, 3), got {positions.shape}")
    n = positions.shape[0]
    angles = np.empty((n, cfg.dim // 2), dtype=np.float64)
    offset = 0
    for axis, dims in enumerate(cfg.axis_dims):
        half = dims // 2
        if half == 0:
            continue
        inv_freq = cfg.base ** (-2.0 * np.arange(half) / dims)
        angles[:, offset : offset + half] = positions[:, axis : axis + 1] * inv_freq
        offset += half
    return angles


def apply_rope(
    x: np.ndarray, positions: np.ndarray, cfg: RopeConfig, inverse: bool = False
) -> np.ndarray:
    """Rotate vectors at the given positions; shape-preserving.

    x may be (N, D) or (H, N, D) with D == cfg.dim; heads share angles.
    Position (0, 0, 0) leaves a vector untouched, and rotations preserve
    the norm of every pair. ``inverse`` applies the transposed rotation
    (used by the backward pass).
    """
    x = np.asarray(x)
    if x.shape[-1] != cfg.dim:
        raise ShapeError(f"vector dim {x.shape[-1]} != rope dim {cfg.dim}")
    if x.shape[-2] != np.asarray(positions).shape[0]:
        raise ShapeError("one position triple required per token")
    angles = rope_angles(positions, cfg)
    cos = np.cos(angles).astype(x.dtype)
    sin = np.sin(angles).astype(x.dtype)
    if inverse:
        sin = -sin
    batched = x if x.ndim == 3 else x[None]
    out = kernels.rope_rotate(np.ascontiguousarray(batched), cos, sin)
    return out if x.ndim == 3 else out[0]


def text_rope_config(head_dim: int, base: float = 10000.0) -> RopeConfig:
    """1-D rotary config for text tokens (whole head dim on one axis)."""
    return RopeConfig(base=base, axis_dims=(head_dim, 0, 0))


def text_positions(count: int) -> np.ndarray:
    """Position triples (i, 0, 0) for a run of text tokens."""
    pos = np.zeros((count, 3), dtype=np.int64)
    pos[:, 0] = np.arange(count)
    return pos
