"""The edit loop: plan, invert, refine, composite.

One edit run walks a descending ladder of noise levels. At each rung the
current composite latent is re-noised and denoised under the composition
prompt; while the rung is above the anchor gate, sampling runs with
anchor-extended attention over the source clip's inversion cache. The
newly generated content is segmented from the decoded sample, mapped to a
latent mask, and only the masked region of the sample is kept (the
residual added to the original latent). The final video takes decoded
content inside the mask and original pixels outside it, so everything
off-mask is preserved exactly.

Ablation modes toggle exactly one mechanism each; two SDEdit baselines
(plain noise-and-denoise at strengths 0.6 and 0.9) share the planner
prompt but skip inversion, anchors, and compositing.
"""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from vfxlab import kernels, tensorio
from vfxlab.attention import AnchorSelection, StandardAttention, build_processor
from vfxlab.diffusion import (
    NoiseSchedule,
    ddim_sample,
    grid_levels,
    noise_to_level,
    sdedit,
    snap_level,
)
from vfxlab.errors import ConfigError, DependencyError, ShapeError
from vfxlab.model import tokenize
from vfxlab.planner import PlannerRequest, keyframes_of
from vfxlab.tensorio import check_mask
from vfxlab.vae import (
    latent_mask_from_pixel_mask,
    pixel_mask_from_latent_mask,
    vae_decode,
    vae_encode,
)

log = logging.getLogger("vfxlab.pipeline")

ABLATION_MODES = (
    "full",
    "no_anchor",
    "no_iterative",
    "no_vlm_protocol",
    "sdedit_low",
    "sdedit_high",
    "full_extended",
    "masked_extended",
)

MODE_LABELS = {
    "full": "Ours",
    "no_anchor": "w/o AnchorExtAttn",
    "no_iterative": "w/o Iterative Refinement",
    "no_vlm_protocol": "w/o VLM Protocol",
    "sdedit_low": "SDEdit (0.6)",
    "sdedit_high": "SDEdit (0.9)",
    "full_extended": "Full Extended Attention",
    "masked_extended": "Masked Extended Attention",
}

SDEDIT_STRENGTHS = {"sdedit_low": 0.6, "sdedit_high": 0.9}


@dataclass(frozen=True)
class EditConfig:
    noise_ladder: tuple = (0.90, 0.75, 0.60, 0.45, 0.30)  # fractions of T
    anchor_gate: float = 0.50  # anchors active while level > gate * T
    keep_fg: float = 0.30
    keep_bg: float = 0.05
    vae_factors: tuple = (2, 4, 4)
    sample_steps: int = 50
    seed: int = 0
    guidance_scale: float = 1.0  # reserved hook; the toy sampler ignores it

    def __post_init__(self):
        ladder = self.noise_ladder
        if not ladder or any(not 0.0 < f <= 1.0 for f in ladder):
            raise ConfigError(f"noise ladder {ladder} must lie in (0, 1]")
        if any(b >= a for a, b in zip(ladder, ladder[1:])):
            raise ConfigError(f"noise ladder {ladder} must be strictly descending")
        # gate values above the ladder top are allowed: they disable anchors
        if self.anchor_gate < 0.0:
            raise ConfigError("anchor gate must be >= 0")

    def to_dict(self) -> dict:
        return {
            "noise_ladder": list(self.noise_ladder),
            "anchor_gate": self.anchor_gate,
            "keep_fg": self.keep_fg,
            "keep_bg": self.keep_bg,
            "vae_factors": list(self.vae_factors),
            "sample_steps": self.sample_steps,
            "seed": self.seed,
            "guidance_scale": self.guidance_scale,
        }


@dataclass
class EditResult:
    video: np.ndarray  # composited output clip
    latent_mask: np.ndarray  # final new-content mask on the latent grid
    pixel_mask: np.ndarray  # the same mask at pixel resolution
    iterations: list  # per-rung records (level, mode, video, mask)
    manifest: dict
    plan: object


def residual_update(x_orig: np.ndarray, x_hat: np.ndarray, latent_mask: np.ndarray):
    """Keep the sample inside the mask, the original outside, exactly.

    Returns (x_res, x_comp) with x_comp = x_orig + x_res; x_comp is
    computed by element selection, so it is bitwise x_hat inside the mask
    and bitwise x_orig outside.
    """
    x_orig = np.asarray(x_orig)
    x_hat = np.asarray(x_hat)
    if x_orig.shape != x_hat.shape:
        raise ShapeError(f"latent shapes differ: {x_orig.shape} vs {x_hat.shape}")
    mask = check_mask(np.asarray(latent_mask))
    if mask.shape != x_orig.shape[:3]:
        raise ShapeError("mask grid does not match the latent grid")
    keep = mask[..., None] == 1
    x_comp = np.where(keep, x_hat, x_orig)
    return x_comp - x_orig, x_comp


def token_mask_from_latent_mask(latent_mask: np.ndarray, patch) -> np.ndarray:
    """Flat boolean mask on the patch-token grid (>= half the cells set)."""
    mask = np.asarray(latent_mask, dtype=np.float32)[..., None]
    pooled = kernels.block_mean(mask, *patch)[..., 0]
    return (pooled >= 0.5).reshape(-1)


def _ladder_levels(cfg: EditConfig, schedule: NoiseSchedule) -> list:
    levels = grid_levels(schedule, cfg.sample_steps)
    snapped = [snap_level(levels, round(f * schedule.train_steps)) for f in cfg.noise_ladder]
    if any(b >= a for a, b in zip(snapped, snapped[1:])):
        raise ConfigError(
            f"noise ladder {cfg.noise_ladder} collapses on the {cfg.sample_steps}-step grid"
        )
    return snapped


def edit(
    video: np.ndarray,
    instruction: str,
    cfg: EditConfig,
    planner,
    segmenter,
    model,
    cache,
    schedule: NoiseSchedule = None,
    extension_mode: str = "anchor_extended",
    mode_name: str = "full",
) -> EditResult:
    """Run the full refinement loop on one clip.

    ``planner`` maps a PlannerRequest to a ScenePlan; ``segmenter``
    provides for_original / for_generated; ``cache`` must come from
    inverting this clip. ``extension_mode`` None forces standard
    attention at every rung (the no_anchor ablation).
    """
    video = tensorio.check_video(video)
    if cache is None or len(cache) == 0:
        raise DependencyError("edit requires the clip's inversion cache; run invert first")
    if schedule is None:
        schedule = NoiseSchedule(train_steps=model.cfg.schedule_steps)

    plan = planner(
        PlannerRequest(
            instruction=instruction,
            keyframes=keyframes_of(video),
            scene_labels=tuple(segmenter.tracks.keys()),
        )
    )
    factors = cfg.vae_factors
    x_orig = vae_encode(video, factors)

    scene_pixel_mask = np.zeros(video.shape[:3], dtype=np.float32)
    for phrase in plan.original_objects:
        scene_pixel_mask = np.maximum(
            scene_pixel_mask, segmenter.for_original(video, phrase)
        )
    scene_latent_mask = latent_mask_from_pixel_mask(scene_pixel_mask, factors)
    token_mask = token_mask_from_latent_mask(scene_latent_mask, model.cfg.patch)

    ids = tokenize(plan.composition_prompt, model.cfg.vocab)
    ladder = _ladder_levels(cfg, schedule)
    gate_level = cfg.anchor_gate * schedule.train_steps
    selection = AnchorSelection(keep_fg=cfg.keep_fg, keep_bg=cfg.keep_bg, seed=cfg.seed)

    x_comp = x_orig.copy()
    latent_mask = np.zeros(x_orig.shape[:3], dtype=np.float32)
    iterations = []
    for level in ladder:
        anchored = extension_mode is not None and level > gate_level
        processor = (
            build_processor(extension_mode, cache, token_mask, selection)
            if anchored
            else StandardAttention()
        )
        x_t = noise_to_level(x_comp, level, schedule, cfg.seed)
        x_hat = ddim_sample(model, x_t, level, ids, schedule, cfg.sample_steps, processor)
        v_hat = np.clip(vae_decode(x_hat, factors), 0.0, 1.0)
        seg = segmenter.for_generated(v_hat, plan.edit_object)
        empty = not seg.any()
        if empty:
            log.info(
                "iteration at level %d: %r not found, keeping previous mask",
                level,
                plan.edit_object,
            )
        else:
            latent_mask = latent_mask_from_pixel_mask(seg, factors)
        _, x_comp = residual_update(x_orig, x_hat, latent_mask)
        iterations.append(
            {
                "level": int(level),
                "processor": processor.mode,
                "segmentation_empty": bool(empty),
                "video": v_hat,
                "latent_mask": latent_mask.copy(),
            }
        )

    pixel_mask = pixel_mask_from_latent_mask(latent_mask, factors)
    decoded = np.clip(vae_decode(x_comp, factors), 0.0, 1.0)
    composited = np.where(pixel_mask[..., None] == 1, decoded, video)

    manifest = {
        "kind": "edit",
        "mode": mode_name,
        "label": MODE_LABELS.get(mode_name, mode_name),
        "instruction": instruction,
        "plan": plan.to_dict(),
        "config": cfg.to_dict(),
        "extension_mode": extension_mode,
        "ladder_levels": [int(t) for t in ladder],
        "iterations": [
            {k: rec[k] for k in ("level", "processor", "segmentation_empty")}
            for rec in iterations
        ],
        "model": model.cfg.to_dict(),
        "schedule": {
            "train_steps": schedule.train_steps,
            "beta_start": schedule.beta_start,
            "beta_end": schedule.beta_end,
        },
        "kernel_backend": kernels.BACKEND,
    }
    return EditResult(
        video=composited.astype(np.float32),
        latent_mask=latent_mask,
        pixel_mask=pixel_mask,
        iterations=iterations,
        manifest=manifest,
        plan=plan,
    )


def _sdedit_baseline(
    mode, video, instruction, cfg, planner, segmenter, model, schedule, strength=None
) -> EditResult:
    video = tensorio.check_video(video)
    if schedule is None:
        schedule = NoiseSchedule(train_steps=model.cfg.schedule_steps)
    plan = planner(
        PlannerRequest(
            instruction=instruction,
            keyframes=keyframes_of(video),
            scene_labels=tuple(segmenter.tracks.keys()),
        )
    )
    if strength is None:
        strength = SDEDIT_STRENGTHS[mode]
    factors = cfg.vae_factors
    x_orig = vae_encode(video, factors)
    ids = tokenize(plan.composition_prompt, model.cfg.vocab)
    x_out = sdedit(
        model, x_orig, strength, ids, schedule, cfg.sample_steps, seed=cfg.seed
    )
    v_out = np.clip(vae_decode(x_out, factors), 0.0, 1.0).astype(np.float32)
    seg = segmenter.for_generated(v_out, plan.edit_object)
    latent_mask = (
        latent_mask_from_pixel_mask(seg, factors)
        if seg.any()
        else np.zeros(x_orig.shape[:3], dtype=np.float32)
    )
    manifest = {
        "kind": "edit",
        "mode": mode,
        "label": MODE_LABELS[mode],
        "instruction": instruction,
        "plan": plan.to_dict(),
        "config": cfg.to_dict(),
        "strength": strength,
        "model": model.cfg.to_dict(),
        "schedule": {
            "train_steps": schedule.train_steps,
            "beta_start": schedule.beta_start,
            "beta_end": schedule.beta_end,
        },
        "kernel_backend": kernels.BACKEND,
    }
    return EditResult(
        video=v_out,
        latent_mask=latent_mask,
        pixel_mask=pixel_mask_from_latent_mask(latent_mask, factors),
        iterations=[],
        manifest=manifest,
        plan=plan,
    )


def run_ablation(
    mode: str,
    video: np.ndarray,
    instruction: str,
    cfg: EditConfig,
    planner,
    naive_planner,
    segmenter,
    model,
    cache,
    schedule: NoiseSchedule = None,
    sdedit_strength: float = None,
) -> EditResult:
    """Run one mode of the ablation ladder; each toggles one mechanism."""
    if mode not in ABLATION_MODES:
        raise ConfigError(f"unknown ablation mode {mode!r}; choose from {ABLATION_MODES}")
    if mode in SDEDIT_STRENGTHS:
        return _sdedit_baseline(
            mode, video, instruction, cfg, planner, segmenter, model, schedule,
            strength=sdedit_strength,
        )
    kwargs = dict(
        video=video,
        instruction=instruction,
        cfg=cfg,
        planner=planner,
        segmenter=segmenter,
        model=model,
        cache=cache,
        schedule=schedule,
        mode_name=mode,
    )
    if mode == "full":
        return edit(extension_mode="anchor_extended", **kwargs)
    if mode == "no_anchor":
        return edit(extension_mode=None, **kwargs)
    if mode == "no_iterative":
        kwargs["cfg"] = replace(cfg, noise_ladder=(cfg.noise_ladder[0],))
        return edit(extension_mode="anchor_extended", **kwargs)
    if mode == "no_vlm_protocol":
        kwargs["planner"] = naive_planner
        return edit(extension_mode="anchor_extended", **kwargs)
    if mode == "full_extended":
        return edit(extension_mode="full_extended", **kwargs)
    return edit(extension_mode="masked_extended", **kwargs)  # masked_extended


def save_result(result: EditResult, run_dir, force: bool = False) -> None:
    """Persist a run directory: frames, masks, intermediates, manifest."""
    run_dir = Path(run_dir)
    if (run_dir / "manifest.json").exists() and not force:
        raise ConfigError(f"{run_dir} already holds a run (use force to overwrite)")
    run_dir.mkdir(parents=True, exist_ok=True)
    tensorio.save_frames(run_dir / "frames", result.video)
    tensorio.save_mask_frames(run_dir / "masks", result.pixel_mask)
    tensorio.write_tensor(run_dir / "latent_mask.vft", result.latent_mask)
    for i, rec in enumerate(result.iterations):
        it_dir = run_dir / "iters" / f"iter{i:02d}"
        tensorio.save_frames(it_dir / "frames", rec["video"])
        tensorio.write_tensor(it_dir / "latent_mask.vft", rec["latent_mask"])
    with open(run_dir / "manifest.json", "w") as fh:
        json.dump(result.manifest, fh, indent=1)


def load_result_video(run_dir):
    """(video, pixel_mask, manifest) back from a run directory."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise DependencyError(f"{run_dir} has no manifest.json; run edit first")
    manifest = json.loads(manifest_path.read_text())
    video = tensorio.load_frames(run_dir / "frames")
    pixel_mask = tensorio.load_mask_frames(run_dir / "masks")
    return video, pixel_mask, manifest
