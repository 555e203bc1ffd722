"""Noise schedule, deterministic DDIM sampling, and inversion.

The schedule has 1000 training timesteps with a linear beta ramp; by
convention alpha-bar(0) = 1, so noising at t = 0 is the identity.
Sampling and inversion run over a coarse grid of levels (50 by default)
subsampled evenly from the full schedule, with eta = 0 throughout, so a
trajectory is a pure function of its inputs.

Inversion walks the grid upward, evaluating the model at each step's
destination level; the capture processor files away every block's video
keys/values under that level, which is exactly the key a later sampling
pass at the same level looks up.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.random import Generator, Philox

from vfxlab.attention import AttentionCache, CaptureAttention, StandardAttention
from vfxlab.errors import ConfigError

# counter tags keep the Philox streams for different purposes disjoint
NOISE_TAG = 1
TRAIN_TAG = 2


@dataclass(frozen=True)
class NoiseSchedule:
    train_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2

    @cached_property
    def alpha_bars(self) -> np.ndarray:
        """(train_steps + 1,) cumulative products, alpha_bars[0] == 1."""
        betas = np.linspace(self.beta_start, self.beta_end, self.train_steps)
        return np.concatenate([[1.0], np.cumprod(1.0 - betas)])

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.train_steps:
            raise ConfigError(f"timestep {t} outside [0, {self.train_steps}]")
        return float(self.alpha_bars[t])


def grid_levels(schedule: NoiseSchedule, steps: int) -> np.ndarray:
    """Descending sampling levels [T, ..., lowest > 0], length == steps."""
    if not 1 <= steps <= schedule.train_steps:
        raise ConfigError(f"grid steps {steps} outside [1, {schedule.train_steps}]")
    levels = np.rint(np.linspace(schedule.train_steps, 0, steps + 1)).astype(np.int64)[:-1]
    if np.any(np.diff(levels) >= 0):
        raise ConfigError(f"grid of {steps} steps is not strictly descending")
    return levels


def snap_level(levels: np.ndarray, t: int) -> int:
    """Nearest grid level to a raw timestep (ties toward the higher level)."""
    return int(levels[np.argmin(np.abs(levels - t))])


def noise_to_level(
    x0: np.ndarray, t: int, schedule: NoiseSchedule, seed: int
) -> np.ndarray:
    """sqrt(ab_t) x0 + sqrt(1 - ab_t) eps with a counter-seeded Gaussian."""
    ab = schedule.alpha_bar(t)
    if t == 0:
        return np.asarray(x0).copy()
    rng = Generator(Philox(key=seed, counter=[t, 0, 0, NOISE_TAG]))
    eps = rng.standard_normal(np.shape(x0))
    out = np.sqrt(ab) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - ab) * eps
    return out.astype(np.asarray(x0).dtype)


def ddim_step(
    x: np.ndarray, eps: np.ndarray, t_from: int, t_to: int, schedule: NoiseSchedule
) -> np.ndarray:
    """Deterministic (eta = 0) DDIM map between two noise levels.

    Works in both directions: t_to < t_from denoises, t_to > t_from is the
    inversion update.
    """
    ab_from = schedule.alpha_bar(t_from)
    ab_to = schedule.alpha_bar(t_to)
    x64 = np.asarray(x, dtype=np.float64)
    e64 = np.asarray(eps, dtype=np.float64)
    x0_hat = (x64 - np.sqrt(1.0 - ab_from) * e64) / np.sqrt(ab_from)
    out = np.sqrt(ab_to) * x0_hat + np.sqrt(1.0 - ab_to) * e64
    return out.astype(np.asarray(x).dtype)


def x0_prediction(
    x: np.ndarray, eps: np.ndarray, t: int, schedule: NoiseSchedule
) -> np.ndarray:
    ab = schedule.alpha_bar(t)
    x64 = np.asarray(x, dtype=np.float64)
    out = (x64 - np.sqrt(1.0 - ab) * np.asarray(eps, dtype=np.float64)) / np.sqrt(ab)
    return out.astype(np.asarray(x).dtype)


def ddim_sample(
    model,
    x: np.ndarray,
    t_start: int,
    text_ids,
    schedule: NoiseSchedule,
    steps: int,
    processor=None,
) -> np.ndarray:
    """Denoise from t_start to 0 along the sampling grid.

    t_start must lie on the grid (use snap_level first). steps == 0 is the
    degenerate call: one model evaluation, returning the x0 prediction at
    t_start.
    """
    if processor is None:
        processor = StandardAttention()
    if steps == 0:
        eps = model.forward(x, t_start, text_ids, processor)
        return x0_prediction(x, eps, t_start, schedule)
    levels = grid_levels(schedule, steps)
    if t_start == 0:
        return np.asarray(x).copy()
    if t_start not in levels:
        raise ConfigError(
            f"t_start {t_start} is not one of the {steps} grid levels; snap it first"
        )
    active = [int(t) for t in levels if t <= t_start]
    out = np.asarray(x).copy()
    for i, t in enumerate(active):
        eps = model.forward(out, t, text_ids, processor)
        t_next = active[i + 1] if i + 1 < len(active) else 0
        out = ddim_step(out, eps, t, t_next, schedule)
    return out


def ddim_invert(
    model,
    x0: np.ndarray,
    schedule: NoiseSchedule,
    steps: int,
    text_ids=(),
    capture: bool = True,
    refine: int = 2,
):
    """Map a clean latent to its noise trajectory, capturing keys/values.

    Each upward step is solved by fixed-point iteration: the noise
    prediction is re-evaluated ``refine`` times at the current estimate
    of the destination latent, so the prediction a later sampling pass
    will compute at that level matches the one the inversion used. This
    keeps invert-then-sample round trips tight at coarse step counts.

    Returns (x at the top level, cache, trajectory) where trajectory is
    the list of (level, latent) pairs visited in ascending order. The
    cache holds one entry per (grid level, block); captures from earlier
    fixed-point iterates are overwritten by the final one.
    """
    cache = AttentionCache()
    processor = CaptureAttention(cache) if capture else StandardAttention()
    levels = grid_levels(schedule, steps)[::-1]  # ascending
    x = np.asarray(x0).copy()
    prev_t = 0
    trajectory = []
    for t in (int(t) for t in levels):
        eps = model.forward(x, t, text_ids, processor)
        x_t = ddim_step(x, eps, prev_t, t, schedule)
        for _ in range(refine):
            eps = model.forward(x_t, t, text_ids, processor)
            x_t = ddim_step(x, eps, prev_t, t, schedule)
        x = x_t
        trajectory.append((t, x))
        prev_t = t
    return x, cache, trajectory


def sdedit(
    model,
    x_orig: np.ndarray,
    strength: float,
    text_ids,
    schedule: NoiseSchedule,
    steps: int,
    seed: int,
    processor=None,
) -> np.ndarray:
    """Noise the input to round(strength * T), then denoise under the prompt."""
    if not 0.0 < strength <= 1.0:
        raise ConfigError(f"sdedit strength {strength} outside (0, 1]")
    levels = grid_levels(schedule, steps)
    t = snap_level(levels, int(round(strength * schedule.train_steps)))
    x_t = noise_to_level(x_orig, t, schedule, seed)
    return ddim_sample(model, x_t, t, text_ids, schedule, steps, processor)
