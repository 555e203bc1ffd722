"""Attention processors: standard, extended, and anchor-extended.

The transformer routes every block's joint attention through a processor
object, which is how source-video features get injected during sampling:

    standard          plain softmax attention over the current tokens
    full_extended     keys/values from the source clip's inversion pass are
                      appended for every source token
    masked_extended   only source tokens inside the scene mask are appended
                      (anchor selection with keep fractions 1 and 0)
    anchor_extended   a sparse, seeded subset of masked (foreground) and
                      unmasked (background) source tokens is appended

Cached source keys are stored before rotary embedding and re-rotated at
their recorded grid positions on every use, so a source key always carries
the same positional phase as the current token at that location. Anchor
subsets are drawn from a counter-based generator keyed on
(seed, timestep, block): every run and platform sees the same anchors.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.random import Generator, Philox

from vfxlab import kernels, tensorio
from vfxlab.errors import ConfigError, NumericsError, ShapeError
from vfxlab.rope import RopeConfig, apply_rope

MODES = ("standard", "full_extended", "masked_extended", "anchor_extended")


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float) -> np.ndarray:
    """softmax(q kᵀ · scale) v over a batch of heads: (H, N, D) query side."""
    q, k, v = np.asarray(q), np.asarray(k), np.asarray(v)
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise ShapeError("attention expects (heads, tokens, dim) arrays")
    if q.shape[2] != k.shape[2] or k.shape[:2] != v.shape[:2] or q.shape[0] != k.shape[0]:
        raise ShapeError(
            f"attention shape mismatch: q{q.shape} k{k.shape} v{v.shape}"
        )
    for name, a in (("q", q), ("k", k), ("v", v)):
        if not np.all(np.isfinite(a)):
            raise NumericsError(f"attention input {name} contains non-finite values")
    return kernels.attention_heads(
        np.ascontiguousarray(q), np.ascontiguousarray(k), np.ascontiguousarray(v), scale
    )


def extend(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    k_ext: np.ndarray,
    v_ext: np.ndarray,
    scale: float,
) -> np.ndarray:
    """Attention over keys/values concatenated with an injected set.

    An empty extension reduces to plain attention on the original arrays.
    The output is invariant to any permutation applied jointly to the
    extension rows (softmax is order-free).
    """
    if k_ext.shape[1] != v_ext.shape[1]:
        raise ShapeError(
            f"extension keys/values unpaired: {k_ext.shape[1]} vs {v_ext.shape[1]}"
        )
    if k_ext.shape[1] == 0:
        return attention(q, k, v, scale)
    return attention(
        q,
        np.concatenate([k, k_ext], axis=1),
        np.concatenate([v, v_ext], axis=1),
        scale,
    )


@dataclass
class AttnContext:
    """Per-call information handed from the transformer to the processor."""

    timestep: int
    block: int
    text_len: int
    video_positions: np.ndarray  # (N, 3) grid triples of the video tokens
    rope_cfg: RopeConfig
    key_video_pre: np.ndarray  # (H, N, Dh) video keys before rotary embedding
    scale: float


@dataclass
class CacheEntry:
    key_pre: np.ndarray  # (H, N, Dh), before rotary embedding
    key_post: np.ndarray  # (H, N, Dh), as used in the capture pass
    value: np.ndarray  # (H, N, Dh)
    positions: np.ndarray  # (N, 3)


class AttentionCache:
    """Source keys/values per (timestep, block), captured during inversion."""

    def __init__(self):
        self.entries: dict = {}

    def put(self, timestep: int, block: int, entry: CacheEntry) -> None:
        self.entries[(timestep, block)] = entry

    def get(self, timestep: int, block: int) -> CacheEntry:
        try:
            return self.entries[(timestep, block)]
        except KeyError:
            raise ConfigError(
                f"attention cache has no entry for timestep {timestep}, block {block}"
            ) from None

    def __len__(self) -> int:
        return len(self.entries)

    def save(self, directory) -> None:
        tensors = {}
        for (t, b), e in self.entries.items():
            stem = f"t{t:05d}_b{b:03d}"
            tensors[f"{stem}.key_pre"] = e.key_pre.astype(np.float32)
            tensors[f"{stem}.key_post"] = e.key_post.astype(np.float32)
            tensors[f"{stem}.value"] = e.value.astype(np.float32)
            tensors[f"{stem}.positions"] = e.positions.astype(np.float32)
        tensorio.write_bundle(directory, tensors)

    @classmethod
    def load(cls, directory) -> "AttentionCache":
        directory = Path(directory)
        tensors = tensorio.read_bundle(directory)
        grouped: dict = {}
        for name, arr in tensors.items():
            stem, part = name.rsplit(".", 1)
            grouped.setdefault(stem, {})[part] = arr
        cache = cls()
        for stem, parts in grouped.items():
            t = int(stem.split("_")[0][1:])
            b = int(stem.split("_")[1][1:])
            cache.put(
                t,
                b,
                CacheEntry(
                    key_pre=parts["key_pre"],
                    key_post=parts["key_post"],
                    value=parts["value"],
                    positions=parts["positions"].astype(np.int64),
                ),
            )
        return cache


@dataclass(frozen=True)
class AnchorSelection:
    """Keep fractions for masked (fg) and unmasked (bg) source tokens."""

    keep_fg: float = 0.30
    keep_bg: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name, frac in (("keep_fg", self.keep_fg), ("keep_bg", self.keep_bg)):
            if not 0.0 <= frac <= 1.0:
                raise ConfigError(f"{name}={frac} outside [0, 1]")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def select_anchors(
    token_mask: np.ndarray, sel: AnchorSelection, timestep: int, block: int
) -> np.ndarray:
    """Sorted token indices kept for extension at one (timestep, block).

    Counts are exactly round(keep · pool size), half rounding up. The
    draw is a shuffle-prefix from a Philox stream keyed on
    (seed, timestep, block): independent per block, reproducible anywhere.
    """
    mask = np.asarray(token_mask, dtype=bool).ravel()
    fg_pool = np.flatnonzero(mask)
    bg_pool = np.flatnonzero(~mask)
    n_fg = _round_half_up(sel.keep_fg * fg_pool.size)
    n_bg = _round_half_up(sel.keep_bg * bg_pool.size)
    rng = Generator(Philox(key=sel.seed, counter=[timestep, block, 0, 0]))
    fg_pick = fg_pool[rng.permutation(fg_pool.size)[:n_fg]]
    bg_pick = bg_pool[rng.permutation(bg_pool.size)[:n_bg]]
    return np.sort(np.concatenate([fg_pick, bg_pick]))


class StandardAttention:
    """Plain attention over the current joint token sequence."""

    mode = "standard"

    def __call__(self, q, k, v, ctx: AttnContext) -> np.ndarray:
        return attention(q, k, v, ctx.scale)


class CaptureAttention(StandardAttention):
    """Standard attention that records video keys/values into a cache."""

    def __init__(self, cache: AttentionCache):
        self.cache = cache

    def __call__(self, q, k, v, ctx: AttnContext) -> np.ndarray:
        start = ctx.text_len
        self.cache.put(
            ctx.timestep,
            ctx.block,
            CacheEntry(
                key_pre=ctx.key_video_pre.copy(),
                key_post=k[:, start:].copy(),
                value=v[:, start:].copy(),
                positions=ctx.video_positions.copy(),
            ),
        )
        return super().__call__(q, k, v, ctx)


class ExtendedAttention:
    """Attention extended with (selected) source keys/values.

    Source keys are re-rotated at their recorded positions, so they enter
    the softmax with the same positional phase the matching current tokens
    have. The masked variant is anchor selection with keep fractions
    (1, 0); the full variant skips selection entirely.
    """

    def __init__(
        self,
        mode: str,
        cache: AttentionCache,
        token_mask: np.ndarray = None,
        selection: AnchorSelection = None,
    ):
        if mode not in MODES or mode == "standard":
            raise ConfigError(f"unknown extension mode {mode!r}")
        if cache is None:
            raise ConfigError(f"{mode} requires an attention cache")
        if mode in ("masked_extended", "anchor_extended") and token_mask is None:
            raise ConfigError(f"{mode} requires a source token mask")
        if mode == "masked_extended":
            seed = selection.seed if selection is not None else 0
            selection = AnchorSelection(keep_fg=1.0, keep_bg=0.0, seed=seed)
        if mode == "anchor_extended" and selection is None:
            selection = AnchorSelection()
        self.mode = mode
        self.cache = cache
        self.token_mask = None if token_mask is None else np.asarray(token_mask, bool)
        self.selection = selection

    def __call__(self, q, k, v, ctx: AttnContext) -> np.ndarray:
        entry = self.cache.get(ctx.timestep, ctx.block)
        k_src = apply_rope(entry.key_pre, entry.positions, ctx.rope_cfg)
        v_src = entry.value
        if self.mode == "full_extended":
            k_ext, v_ext = k_src, v_src
        else:
            idx = select_anchors(self.token_mask, self.selection, ctx.timestep, ctx.block)
            k_ext = np.ascontiguousarray(k_src[:, idx])
            v_ext = np.ascontiguousarray(v_src[:, idx])
        return extend(q, k, v, k_ext, v_ext, ctx.scale)


def build_processor(
    mode: str,
    cache: AttentionCache = None,
    token_mask: np.ndarray = None,
    selection: AnchorSelection = None,
):
    """Construct the processor for a mode name (see MODES)."""
    if mode == "standard":
        return StandardAttention()
    return ExtendedAttention(mode, cache, token_mask, selection)
