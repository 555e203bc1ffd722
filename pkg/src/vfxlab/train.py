"""Noise-prediction training for the toy transformer.

The backward pass is written by hand against the tape recorded by
``DiTModel.forward``; it is checked against central finite differences in
the test suite. Optimization is Adam. All randomness (clip choice,
timestep, noise draw) comes from a counter-based stream keyed on the run
seed and step index, so two runs with the same seed produce identical
loss curves.
"""

import math

import numpy as np
from numpy.random import Generator, Philox

from vfxlab.diffusion import TRAIN_TAG, NoiseSchedule
from vfxlab.errors import TrainingDivergedError
from vfxlab.model import DiTModel, merge_heads, patchify, split_heads
from vfxlab.rope import apply_rope


def layer_norm_backward(dy: np.ndarray, cache) -> np.ndarray:
    xhat, inv = cache
    m1 = dy.mean(axis=-1, keepdims=True)
    m2 = (dy * xhat).mean(axis=-1, keepdims=True)
    return inv * (dy - m1 - xhat * m2)


def gelu_backward(dg: np.ndarray, cache) -> np.ndarray:
    u, t = cache
    c = math.sqrt(2.0 / math.pi)
    d_inner = c * (1.0 + 3.0 * 0.044715 * u * u)
    return dg * (0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * d_inner)


def backward(model: DiTModel, tape: list, d_eps: np.ndarray) -> dict:
    """Gradients of a scalar loss with upstream gradient d_eps."""
    cfg, p = model.cfg, model.params
    top = tape[0]
    blocks = tape[1 : 1 + cfg.blocks]
    fin = tape[-1]
    grads = {k: np.zeros_like(v) for k, v in p.items()}

    d_tokens = patchify(d_eps, cfg.patch)[0]
    yhat = fin["ln_f"][0]
    grads["patch_out_w"] += yhat.T @ d_tokens
    grads["patch_out_b"] += d_tokens.sum(axis=0)
    d_x_v = layer_norm_backward(d_tokens @ p["patch_out_w"].T, fin["ln_f"])
    d_x_t = np.zeros((top["ids"].size, cfg.dim), dtype=d_x_v.dtype)

    for cb in reversed(blocks):
        d_x_t, d_x_v = _block_backward(model, cb, top, d_x_t, d_x_v, grads)

    d_temb = d_x_t.sum(axis=0) + d_x_v.sum(axis=0)
    np.add.at(grads["vocab_emb"], top["ids"], d_x_t)
    grads["patch_in_w"] += top["raw"].T @ d_x_v
    grads["patch_in_b"] += d_x_v.sum(axis=0)
    grads["time_w"] += np.outer(top["tfeat"], d_temb)
    grads["time_b"] += d_temb
    return grads


def _block_backward(model, cb, top, d_out_t, d_out_v, grads):
    cfg, p = model.cfg, model.params
    b, n_text = cb["block"], cb["n_text"]
    d_outcat = np.concatenate([d_out_t, d_out_v], axis=0)

    grads[f"b{b}.mlp2_w"] += cb["g"].T @ d_outcat
    grads[f"b{b}.mlp2_b"] += d_outcat.sum(axis=0)
    d_u = gelu_backward(d_outcat @ p[f"b{b}.mlp2_w"].T, cb["gcache"])
    grads[f"b{b}.mlp1_w"] += cb["bhat"].T @ d_u
    grads[f"b{b}.mlp1_b"] += d_u.sum(axis=0)
    d_hcat = d_outcat + layer_norm_backward(d_u @ p[f"b{b}.mlp1_w"].T, cb["ln2"])
    d_h_t, d_h_v = d_hcat[:n_text], d_hcat[n_text:]

    grads[f"b{b}.o_text"] += cb["merged"][:n_text].T @ d_h_t
    grads[f"b{b}.o_vid"] += cb["merged"][n_text:].T @ d_h_v
    d_merged = np.concatenate(
        [d_h_t @ p[f"b{b}.o_text"].T, d_h_v @ p[f"b{b}.o_vid"].T], axis=0
    )
    d_attn = split_heads(d_merged, cfg.heads)

    probs, q, k, v = cb["probs"], cb["q"], cb["k"], cb["v"]
    d_probs = np.matmul(d_attn, np.swapaxes(v, 1, 2))
    d_v = np.matmul(np.swapaxes(probs, 1, 2), d_attn)
    d_logits = probs * (d_probs - (d_probs * probs).sum(axis=2, keepdims=True))
    scale = 1.0 / math.sqrt(cfg.head_dim)
    d_q = np.matmul(d_logits, k) * scale
    d_k = np.matmul(np.swapaxes(d_logits, 1, 2), q) * scale

    tpos, positions = top["tpos"], top["positions"]
    d_q_t, d_q_v = d_q[:, :n_text], d_q[:, n_text:]
    d_k_t, d_k_v = d_k[:, :n_text], d_k[:, n_text:]
    d_v_t, d_v_v = d_v[:, :n_text], d_v[:, n_text:]
    if n_text:
        d_q_t = apply_rope(d_q_t, tpos, model.text_rope, inverse=True)
        d_k_t = apply_rope(d_k_t, tpos, model.text_rope, inverse=True)
    d_q_v = apply_rope(d_q_v, positions, model.video_rope, inverse=True)
    d_k_v = apply_rope(d_k_v, positions, model.video_rope, inverse=True)

    a_t, a_v = cb["a_t"], cb["a_v"]
    d_a_t = np.zeros_like(a_t)
    d_a_v = np.zeros_like(a_v)
    for name, grad_heads, side in (
        ("q_text", d_q_t, "t"),
        ("k_text", d_k_t, "t"),
        ("v_text", d_v_t, "t"),
        ("q_vid", d_q_v, "v"),
        ("k_vid", d_k_v, "v"),
        ("v_vid", d_v_v, "v"),
    ):
        flat = merge_heads(grad_heads)
        if side == "t":
            grads[f"b{b}.{name}"] += a_t.T @ flat
            d_a_t += flat @ p[f"b{b}.{name}"].T
        else:
            grads[f"b{b}.{name}"] += a_v.T @ flat
            d_a_v += flat @ p[f"b{b}.{name}"].T

    d_x_t = d_h_t + layer_norm_backward(d_a_t, cb["ln1t"])
    d_x_v = d_h_v + layer_norm_backward(d_a_v, cb["ln1v"])
    return d_x_t, d_x_v


class Adam:
    def __init__(self, params: dict, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for key, value in params.items():
            g = grads[key]
            self.m[key] = self.b1 * self.m[key] + (1.0 - self.b1) * g
            self.v[key] = self.b2 * self.v[key] + (1.0 - self.b2) * g * g
            value -= self.lr * (self.m[key] / c1) / (np.sqrt(self.v[key] / c2) + self.eps)


def train_toy(
    model: DiTModel,
    items: list,
    steps: int,
    lr: float,
    schedule: NoiseSchedule = None,
    seed: int = 0,
):
    """Minimize noise-prediction MSE over (latent, text ids) pairs.

    Returns (model, losses); the model's weights are updated in place.
    Raises TrainingDivergedError the moment the loss goes non-finite.
    """
    if not items:
        raise TrainingDivergedError("training corpus is empty")
    if schedule is None:
        schedule = NoiseSchedule(train_steps=model.cfg.schedule_steps)
    opt = Adam(model.params, lr)
    losses = []
    for i in range(steps):
        rng = Generator(Philox(key=seed, counter=[i, 0, 0, TRAIN_TAG]))
        latent, ids = items[int(rng.integers(len(items)))]
        t = int(rng.integers(1, schedule.train_steps + 1))
        eps = rng.standard_normal(latent.shape).astype(latent.dtype)
        ab = schedule.alpha_bar(t)
        x_t = (np.sqrt(ab) * latent + np.sqrt(1.0 - ab) * eps).astype(latent.dtype)
        tape = []
        pred = model.forward(x_t, t, ids, tape=tape)
        diff = pred - eps
        loss = float(np.mean(diff * diff))
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} at step {i}")
        losses.append(loss)
        if lr != 0.0:
            grads = backward(model, tape, (2.0 / diff.size) * diff)
            opt.step(model.params, grads)
    return model, losses


def smoothed(losses, window: int = 100):
    """(initial, final) moving-average endpoints of a loss log."""
    w = min(window, len(losses))
    return float(np.mean(losses[:w])), float(np.mean(losses[-w:]))
