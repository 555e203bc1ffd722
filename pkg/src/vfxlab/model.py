"""A small text-to-video diffusion transformer.

The whole clip is one token sequence: latent patches in (t, h, w) scan
order joined with embedded text tokens, processed by full self-attention
in every block. Text and video tokens have separate query/key/value and
output projections; the MLP is shared. Video queries/keys are rotated by
3-axis rotary embeddings at their grid positions, text queries/keys by
1-D rotary embeddings at their own index, so relative offsets are visible
to the model on both modalities without any learned position table.

The model predicts the noise component of its input latent. The final
projection starts at zero, so a freshly built model predicts zeros, which
keeps deterministic inversion exact before training.

``forward(..., tape=[])`` records every intermediate needed by the manual
backward pass in ``vfxlab.train``; the tape path computes attention
inline (training never injects a processor).
"""

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vfxlab.attention import AttnContext, StandardAttention
from vfxlab.errors import ConfigError, ShapeError
from vfxlab.rope import RopeConfig, apply_rope, text_positions, text_rope_config
from vfxlab.tensorio import read_bundle, write_bundle

LN_EPS = 1e-5


def patchify(latent: np.ndarray, patch) -> tuple:
    """Flatten latent patches to tokens in (t, h, w) scan order.

    Returns (tokens (N, P), positions (N, 3), grid (gf, gh, gw)).
    """
    latent = np.asarray(latent)
    if latent.ndim != 4:
        raise ShapeError(f"latent must be (lf, lh, lw, C), got {latent.shape}")
    pt, ph, pw = patch
    lf, lh, lw, c = latent.shape
    if lf % pt or lh % ph or lw % pw:
        raise ShapeError(f"latent {latent.shape[:3]} not divisible by patch {patch}")
    gf, gh, gw = lf // pt, lh // ph, lw // pw
    tokens = (
        latent.reshape(gf, pt, gh, ph, gw, pw, c)
        .transpose(0, 2, 4, 1, 3, 5, 6)
        .reshape(gf * gh * gw, pt * ph * pw * c)
    )
    grids = np.meshgrid(np.arange(gf), np.arange(gh), np.arange(gw), indexing="ij")
    positions = np.stack(grids, axis=-1).reshape(-1, 3).astype(np.int64)
    return np.ascontiguousarray(tokens), positions, (gf, gh, gw)


def unpatchify(tokens: np.ndarray, grid, patch, channels: int) -> np.ndarray:
    """Inverse of patchify; lossless round trip."""
    pt, ph, pw = patch
    gf, gh, gw = grid
    return (
        tokens.reshape(gf, gh, gw, pt, ph, pw, channels)
        .transpose(0, 3, 1, 4, 2, 5, 6)
        .reshape(gf * pt, gh * ph, gw * pw, channels)
    )


def tokenize(text: str, vocab) -> np.ndarray:
    """Map text to vocabulary ids; out-of-vocabulary words are dropped."""
    lookup = {w: i for i, w in enumerate(vocab)}
    words = [w for w in "".join(c if c.isalpha() else " " for c in text.lower()).split()]
    ids, skipped = [], []
    for w in words:
        if w in lookup:
            ids.append(lookup[w])
        else:
            skipped.append(w)
    if skipped:
        warnings.warn(f"dropping out-of-vocabulary words: {sorted(set(skipped))}")
    return np.asarray(ids, dtype=np.int64)


def layer_norm(x: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat, (xhat, inv)


def gelu(u: np.ndarray):
    c = u.dtype.type(math.sqrt(2.0 / math.pi))
    a = u.dtype.type(0.044715)
    # tanh saturates well inside +-15; clamping dodges the slow libm path
    inner = np.clip(c * (u + a * u * u * u), -15.0, 15.0)
    t = np.tanh(inner)
    return 0.5 * u * (1.0 + t), (u, t)


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    tokens, dim = x.shape
    return np.ascontiguousarray(
        x.reshape(tokens, heads, dim // heads).transpose(1, 0, 2)
    )


def merge_heads(x: np.ndarray) -> np.ndarray:
    heads, tokens, hd = x.shape
    return np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(tokens, heads * hd)


def sinusoidal_table(steps: int, dim: int) -> np.ndarray:
    """Fixed timestep feature table, (steps + 1, dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    angles = np.arange(steps + 1)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def _axis_split(head_dim: int) -> tuple:
    """Split a head dim into three even chunks, leftovers to t then h."""
    base = 2 * (head_dim // 6)
    dims = [base, base, base]
    rest = head_dim - 3 * base
    i = 0
    while rest > 0:
        dims[i] += 2
        rest -= 2
        i = (i + 1) % 3
    return tuple(dims)


@dataclass(frozen=True)
class ModelConfig:
    vocab: tuple
    blocks: int = 4
    dim: int = 96
    heads: int = 4
    patch: tuple = (1, 2, 2)
    latent_channels: int = 3
    rope_base: float = 10000.0
    time_features: int = 64
    schedule_steps: int = 1000
    mlp_ratio: int = 4
    seed: int = 0

    def __post_init__(self):
        if not self.vocab:
            raise ConfigError("model vocabulary must be nonempty")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.dim % 6:
            raise ConfigError(f"dim {self.dim} must be divisible by 6 for 3-axis rope")
        if self.head_dim % 2:
            raise ConfigError("head dim must be even")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def patch_values(self) -> int:
        pt, ph, pw = self.patch
        return pt * ph * pw * self.latent_channels

    def to_dict(self) -> dict:
        return {
            "vocab": list(self.vocab),
            "blocks": self.blocks,
            "dim": self.dim,
            "heads": self.heads,
            "patch": list(self.patch),
            "latent_channels": self.latent_channels,
            "rope_base": self.rope_base,
            "time_features": self.time_features,
            "schedule_steps": self.schedule_steps,
            "mlp_ratio": self.mlp_ratio,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["vocab"] = tuple(d["vocab"])
        d["patch"] = tuple(d["patch"])
        return cls(**d)


class DiTModel:
    """Weights plus the pure forward map; construction is seeded."""

    def __init__(self, cfg: ModelConfig, params: dict):
        self.cfg = cfg
        self.params = params
        self.time_table = sinusoidal_table(cfg.schedule_steps, cfg.time_features).astype(
            params["patch_in_w"].dtype
        )
        self.video_rope = RopeConfig(cfg.rope_base, _axis_split(cfg.head_dim))
        self.text_rope = text_rope_config(cfg.head_dim, cfg.rope_base)

    @classmethod
    def build(cls, cfg: ModelConfig, dtype=np.float32) -> "DiTModel":
        rng = np.random.default_rng(cfg.seed)
        d, std = cfg.dim, 0.02

        def normal(*shape):
            return rng.normal(0.0, std, size=shape).astype(dtype)

        params = {
            "vocab_emb": normal(len(cfg.vocab), d),
            "time_w": normal(cfg.time_features, d),
            "time_b": np.zeros(d, dtype=dtype),
            "patch_in_w": normal(cfg.patch_values, d),
            "patch_in_b": np.zeros(d, dtype=dtype),
        }
        hidden = cfg.mlp_ratio * d
        for b in range(cfg.blocks):
            for name in ("q_text", "k_text", "v_text", "o_text", "q_vid", "k_vid", "v_vid", "o_vid"):
                params[f"b{b}.{name}"] = normal(d, d)
            params[f"b{b}.mlp1_w"] = normal(d, hidden)
            params[f"b{b}.mlp1_b"] = np.zeros(hidden, dtype=dtype)
            params[f"b{b}.mlp2_w"] = normal(hidden, d)
            params[f"b{b}.mlp2_b"] = np.zeros(d, dtype=dtype)
        params["patch_out_w"] = np.zeros((d, cfg.patch_values), dtype=dtype)
        params["patch_out_b"] = np.zeros(cfg.patch_values, dtype=dtype)
        return cls(cfg, params)

    def forward(
        self,
        latent: np.ndarray,
        timestep: int,
        text_ids=(),
        processor=None,
        tape: list = None,
    ) -> np.ndarray:
        """Predict the noise component of a noisy latent.

        Deterministic in (weights, inputs, processor). With ``tape`` a
        list, intermediates are appended for the backward pass and
        attention is computed inline (standard mode only).
        """
        cfg, p = self.cfg, self.params
        if not 0 <= timestep <= cfg.schedule_steps:
            raise ConfigError(f"timestep {timestep} outside [0, {cfg.schedule_steps}]")
        latent = np.asarray(latent)
        if latent.ndim != 4 or latent.shape[3] != cfg.latent_channels:
            raise ShapeError(f"latent shape {latent.shape} unsupported")
        ids = np.asarray(text_ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= len(cfg.vocab)):
            raise ConfigError("text id outside the vocabulary")
        if processor is None:
            processor = StandardAttention()

        dtype = p["patch_in_w"].dtype
        raw, positions, grid = patchify(latent, cfg.patch)
        raw = raw.astype(dtype)
        tfeat = self.time_table[timestep]
        temb = tfeat @ p["time_w"] + p["time_b"]
        x_v = raw @ p["patch_in_w"] + p["patch_in_b"] + temb
        x_t = p["vocab_emb"][ids] + temb
        n_text = x_t.shape[0]
        tpos = text_positions(n_text)
        scale = 1.0 / math.sqrt(cfg.head_dim)

        if tape is not None:
            tape.append(
                {"raw": raw, "tfeat": tfeat, "ids": ids, "positions": positions, "tpos": tpos}
            )
        for b in range(cfg.blocks):
            x_t, x_v = self._block(
                b, x_t, x_v, positions, tpos, timestep, scale, processor, tape
            )
        yhat, ln_f = layer_norm(x_v)
        out_tokens = yhat @ p["patch_out_w"] + p["patch_out_b"]
        if tape is not None:
            tape.append({"ln_f": ln_f, "grid": grid})
        return unpatchify(out_tokens, grid, cfg.patch, cfg.latent_channels)

    def _block(self, b, x_t, x_v, positions, tpos, timestep, scale, processor, tape):
        cfg, p = self.cfg, self.params
        heads = cfg.heads
        n_text = x_t.shape[0]
        a_t, ln1t = layer_norm(x_t)
        a_v, ln1v = layer_norm(x_v)
        q_t = split_heads(a_t @ p[f"b{b}.q_text"], heads)
        k_t = split_heads(a_t @ p[f"b{b}.k_text"], heads)
        v_t = split_heads(a_t @ p[f"b{b}.v_text"], heads)
        q_v = split_heads(a_v @ p[f"b{b}.q_vid"], heads)
        k_v_pre = split_heads(a_v @ p[f"b{b}.k_vid"], heads)
        v_v = split_heads(a_v @ p[f"b{b}.v_vid"], heads)
        if n_text:
            q_t = apply_rope(q_t, tpos, self.text_rope)
            k_t = apply_rope(k_t, tpos, self.text_rope)
        q = np.concatenate([q_t, apply_rope(q_v, positions, self.video_rope)], axis=1)
        k_v_post = apply_rope(k_v_pre, positions, self.video_rope)
        k = np.concatenate([k_t, k_v_post], axis=1)
        v = np.concatenate([v_t, v_v], axis=1)

        if tape is None:
            ctx = AttnContext(
                timestep=timestep,
                block=b,
                text_len=n_text,
                video_positions=positions,
                rope_cfg=self.video_rope,
                key_video_pre=k_v_pre,
                scale=scale,
            )
            attn = processor(q, k, v, ctx)
            probs = None
        else:
            logits = np.matmul(q, np.swapaxes(k, 1, 2)) * q.dtype.type(scale)
            logits -= logits.max(axis=2, keepdims=True)
            probs = np.exp(logits)
            probs /= probs.sum(axis=2, keepdims=True)
            attn = np.matmul(probs, v)

        merged = merge_heads(attn)
        y_t = merged[:n_text] @ p[f"b{b}.o_text"]
        y_v = merged[n_text:] @ p[f"b{b}.o_vid"]
        h_t = x_t + y_t
        h_v = x_v + y_v
        hcat = np.concatenate([h_t, h_v], axis=0)
        bhat, ln2 = layer_norm(hcat)
        u = bhat @ p[f"b{b}.mlp1_w"] + p[f"b{b}.mlp1_b"]
        g, gcache = gelu(u)
        m = g @ p[f"b{b}.mlp2_w"] + p[f"b{b}.mlp2_b"]
        out = hcat + m
        if tape is not None:
            tape.append(
                {
                    "block": b,
                    "n_text": n_text,
                    "a_t": a_t,
                    "a_v": a_v,
                    "ln1t": ln1t,
                    "ln1v": ln1v,
                    "q": q,
                    "k": k,
                    "v": v,
                    "probs": probs,
                    "merged": merged,
                    "ln2": ln2,
                    "bhat": bhat,
                    "gcache": gcache,
                    "g": g,
                }
            )
        return out[:n_text], out[n_text:]


def save_checkpoint(model: DiTModel, directory) -> None:
    """Persist weights as a tensor bundle plus a structured config file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_bundle(directory / "weights", {k: v.astype(np.float32) for k, v in model.params.items()})
    with open(directory / "model.json", "w") as fh:
        json.dump(model.cfg.to_dict(), fh, indent=1)


def load_checkpoint(directory) -> DiTModel:
    directory = Path(directory)
    cfg = ModelConfig.from_dict(json.loads((directory / "model.json").read_text()))
    params = read_bundle(directory / "weights")
    return DiTModel(cfg, params)
