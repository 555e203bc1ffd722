"""Command-line entry point.

Pipeline stages map to subcommands; each writes a run directory with an
immutable manifest, and stages that need an earlier stage's output fail
with a dependency error naming the command to run first. Errors print a
machine-readable JSON object on stderr and exit nonzero with a
category-specific code.
"""

import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from vfxlab import corpus as corpus_mod
from vfxlab import tensorio
from vfxlab.attention import AttentionCache
from vfxlab.config import (
    edit_config,
    load_config,
    model_config,
    remote_endpoint,
    schedule_config,
)
from vfxlab.diffusion import ddim_invert
from vfxlab.errors import ConfigError, DependencyError, VfxError
from vfxlab.metrics import (
    HistogramEmbedder,
    QUALITY_KEYS,
    RemoteQualityBackend,
    StubQualityBackend,
    directional_score,
    masked_ssim,
    vlm_quality_eval,
)
from vfxlab.model import DiTModel, load_checkpoint, save_checkpoint, tokenize
from vfxlab.pipeline import ABLATION_MODES, MODE_LABELS, run_ablation, save_result
from vfxlab.planner import plan_naive, plan_remote, plan_stub
from vfxlab.segment import Segmenter
from vfxlab.train import train_toy
from vfxlab.vae import vae_encode

EXIT_CODES = {
    "config": 2,
    "dependency": 3,
    "planner": 4,
    "grammar": 5,
    "format": 6,
    "segmentation": 7,
    "metric": 8,
}


def _fail(err: VfxError) -> None:
    payload = {"error": {"category": err.category, "message": str(err)}}
    click.echo(json.dumps(payload), err=True)
    sys.exit(EXIT_CODES.get(err.category, 1))


def _fresh_dir(path: Path, force: bool) -> Path:
    if (path / "manifest.json").exists() and not force:
        raise ConfigError(f"{path} already holds a run; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(path: Path, manifest: dict) -> None:
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config file")
@click.pass_context
def main(ctx, config_path):
    """Desk-scale video augmentation pipeline."""
    try:
        ctx.obj = load_config(config_path)
    except VfxError as err:
        _fail(err)


def _load_corpus_dir(corpus_dir: Path):
    meta_path = corpus_dir / "corpus.json"
    if not meta_path.exists():
        raise DependencyError(f"{corpus_dir} has no corpus.json; run corpus-gen first")
    return json.loads(meta_path.read_text())


def _load_clip(corpus_dir: Path, name: str):
    meta = _load_corpus_dir(corpus_dir)
    scenes = {s["name"]: s for s in meta["scenes"]}
    if name not in scenes:
        raise ConfigError(f"unknown clip {name!r}; corpus has {sorted(scenes)}")
    scene_dir = corpus_dir / "scenes" / name
    video = tensorio.read_tensor(scene_dir / "video.vft")
    tracks = {
        label: tensorio.load_mask_frames(scene_dir / "masks" / label.replace(" ", "_"))
        for label in scenes[name]["labels"]
    }
    return video, tracks, scenes[name]


@main.command("corpus-gen")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--force", is_flag=True)
@click.pass_obj
def corpus_gen(cfg, out_dir, force):
    """Generate the default synthetic corpus with ground-truth tracks."""
    try:
        out = _fresh_dir(Path(out_dir), force)
        scenes = []
        for item in corpus_mod.default_corpus():
            video, tracks, labels = corpus_mod.generate(item.spec)
            scene_dir = out / "scenes" / item.name
            tensorio.save_frames(scene_dir / "frames", video)
            tensorio.write_tensor(scene_dir / "video.vft", video)
            for label, track in tracks.items():
                tensorio.save_mask_frames(scene_dir / "masks" / label.replace(" ", "_"), track)
            scenes.append(
                {
                    "name": item.name,
                    "labels": labels,
                    "caption": corpus_mod.scene_caption(item.spec),
                    "instruction": item.instruction,
                    "seed": item.spec.seed,
                    "background": item.spec.background,
                }
            )
        meta = {"scenes": scenes}
        with open(out / "corpus.json", "w") as fh:
            json.dump(meta, fh, indent=1)
        _write_manifest(out, {"kind": "corpus", "scenes": len(scenes)})
        click.echo(f"wrote {len(scenes)} scenes to {out}")
    except VfxError as err:
        _fail(err)


@main.command()
@click.option("--corpus", "corpus_dir", type=click.Path(), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--steps", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--force", is_flag=True)
@click.pass_obj
def train(cfg, corpus_dir, out_dir, steps, lr, seed, force):
    """Train the toy model on the corpus; writes a checkpoint + loss log."""
    try:
        corpus_dir = Path(corpus_dir)
        meta = _load_corpus_dir(corpus_dir)
        out = _fresh_dir(Path(out_dir), force)
        steps = steps if steps is not None else cfg["train"]["steps"]
        lr = lr if lr is not None else cfg["train"]["lr"]
        seed = seed if seed is not None else cfg["train"]["seed"]
        factors = tuple(cfg["edit"]["vae_factors"])
        items = []
        for scene in meta["scenes"]:
            video = tensorio.read_tensor(corpus_dir / "scenes" / scene["name"] / "video.vft")
            latent = vae_encode(video, factors)
            ids = tokenize(scene["caption"], corpus_mod.VOCAB)
            items.append((latent, ids))
        model = DiTModel.build(model_config(cfg))
        schedule = schedule_config(cfg)
        started = time.time()
        model, losses = train_toy(model, items, steps, lr, schedule, seed)
        elapsed = time.time() - started
        save_checkpoint(model, out)
        with open(out / "loss.json", "w") as fh:
            json.dump(losses, fh)
        _write_manifest(
            out,
            {
                "kind": "train",
                "steps": steps,
                "lr": lr,
                "seed": seed,
                "seconds": elapsed,
                "corpus": str(corpus_dir),
            },
        )
        click.echo(
            f"trained {steps} steps in {elapsed:.1f}s; "
            f"loss {losses[0]:.4f} -> {losses[-1]:.4f}"
        )
    except VfxError as err:
        _fail(err)


@main.command()
@click.option("--corpus", "corpus_dir", type=click.Path(), required=True)
@click.option("--clip", required=True)
@click.option("--checkpoint", "ckpt_dir", type=click.Path(), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--steps", type=int, default=None)
@click.option("--force", is_flag=True)
@click.pass_obj
def invert(cfg, corpus_dir, clip, ckpt_dir, out_dir, steps, force):
    """DDIM-invert a corpus clip, capturing the attention cache."""
    try:
        ckpt_dir = Path(ckpt_dir)
        if not (ckpt_dir / "model.json").exists():
            raise DependencyError(f"{ckpt_dir} has no checkpoint; run train first")
        video, _, _ = _load_clip(Path(corpus_dir), clip)
        model = load_checkpoint(ckpt_dir)
        schedule = schedule_config(cfg)
        steps = steps if steps is not None else cfg["invert"]["steps"]
        out = _fresh_dir(Path(out_dir), force)
        latent = vae_encode(video, tuple(cfg["edit"]["vae_factors"]))
        x_top, cache, _ = ddim_invert(model, latent, schedule, steps)
        cache.save(out / "cache")
        tensorio.write_tensor(out / "x_top.vft", x_top.astype(np.float32))
        _write_manifest(
            out,
            {
                "kind": "invert",
                "clip": clip,
                "steps": steps,
                "checkpoint": str(ckpt_dir),
                "cache_entries": len(cache),
            },
        )
        click.echo(f"inverted {clip}: {len(cache)} cache entries -> {out}")
    except VfxError as err:
        _fail(err)


def _planner_for(cfg, kind):
    if kind == "stub":
        return plan_stub
    if kind == "naive":
        return plan_naive
    if kind == "remote":
        endpoint = remote_endpoint(cfg["planner"])
        return lambda request: plan_remote(request, endpoint)
    raise ConfigError(f"unknown planner {kind!r}; choose stub, naive, or remote")


def _run_edit(cfg, corpus_dir, clip, ckpt_dir, invert_dir, out_dir, instruction,
              planner_kind, seed, mode, force, strength=None):
    ckpt_dir = Path(ckpt_dir)
    invert_dir = Path(invert_dir)
    if not (ckpt_dir / "model.json").exists():
        raise DependencyError(f"{ckpt_dir} has no checkpoint; run train first")
    if mode not in ("sdedit_low", "sdedit_high") and not (invert_dir / "cache").exists():
        raise DependencyError(f"{invert_dir} has no inversion cache; run invert first")
    video, tracks, scene = _load_clip(Path(corpus_dir), clip)
    instruction = instruction or scene["instruction"]
    model = load_checkpoint(ckpt_dir)
    schedule = schedule_config(cfg)
    cache = (
        AttentionCache.load(invert_dir / "cache")
        if (invert_dir / "cache").exists()
        else None
    )
    econf = edit_config(cfg, seed=seed)
    result = run_ablation(
        mode,
        video,
        instruction,
        econf,
        _planner_for(cfg, planner_kind),
        plan_naive,
        Segmenter(tracks),
        model,
        cache,
        schedule,
        sdedit_strength=strength,
    )
    result.manifest["clip"] = clip
    result.manifest["planner"] = planner_kind
    save_result(result, out_dir, force=force)
    click.echo(f"{MODE_LABELS[mode]} edit of {clip} -> {out_dir}")


@main.command()
@click.option("--corpus", "corpus_dir", type=click.Path(), required=True)
@click.option("--clip", required=True)
@click.option("--checkpoint", "ckpt_dir", type=click.Path(), required=True)
@click.option("--invert", "invert_dir", type=click.Path(), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--instruction", default=None, help="defaults to the clip's paired instruction")
@click.option("--planner", "planner_kind", type=click.Choice(["stub", "naive", "remote"]), default="stub")
@click.option("--seed", type=int, default=None)
@click.option("--force", is_flag=True)
@click.pass_obj
def edit(cfg, corpus_dir, clip, ckpt_dir, invert_dir, out_dir, instruction, planner_kind, seed, force):
    """Run the full edit pipeline on one clip."""
    try:
        _run_edit(cfg, corpus_dir, clip, ckpt_dir, invert_dir, out_dir, instruction,
                  planner_kind, seed, "full", force)
    except VfxError as err:
        _fail(err)


@main.command()
@click.option("--mode", type=click.Choice(list(ABLATION_MODES)), required=True)
@click.option("--corpus", "corpus_dir", type=click.Path(), required=True)
@click.option("--clip", required=True)
@click.option("--checkpoint", "ckpt_dir", type=click.Path(), required=True)
@click.option("--invert", "invert_dir", type=click.Path(), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--instruction", default=None)
@click.option("--planner", "planner_kind", type=click.Choice(["stub", "naive", "remote"]), default="stub")
@click.option("--seed", type=int, default=None)
@click.option("--strength", type=float, default=None, help="override for the sdedit modes")
@click.option("--force", is_flag=True)
@click.pass_obj
def ablate(cfg, mode, corpus_dir, clip, ckpt_dir, invert_dir, out_dir, instruction,
           planner_kind, seed, strength, force):
    """Run one ablation mode (each toggles a single mechanism)."""
    try:
        if strength is not None and mode not in ("sdedit_low", "sdedit_high"):
            raise ConfigError("--strength only applies to the sdedit modes")
        _run_edit(cfg, corpus_dir, clip, ckpt_dir, invert_dir, out_dir, instruction,
                  planner_kind, seed, mode, force, strength=strength)
    except VfxError as err:
        _fail(err)


@main.command("eval")
@click.option("--run", "run_dir", type=click.Path(), required=True)
@click.option("--corpus", "corpus_dir", type=click.Path(), required=True)
@click.option("--backend", type=click.Choice(["stub", "remote"]), default=None)
@click.pass_obj
def eval_cmd(cfg, run_dir, corpus_dir, backend):
    """Score a finished run: masked SSIM, directional, quality aspects."""
    try:
        from vfxlab.pipeline import load_result_video

        run_dir = Path(run_dir)
        edited, pixel_mask, manifest = load_result_video(run_dir)
        _, _, scene = _load_clip(Path(corpus_dir), manifest["clip"])
        # compare in the exported 8-bit space on both sides
        video = tensorio.load_frames(
            Path(corpus_dir) / "scenes" / manifest["clip"] / "frames"
        )
        backend = backend or cfg["metrics"]["backend"]
        plan = manifest["plan"]
        report = evaluate_edit(video, edited, pixel_mask, scene, plan, cfg, backend)
        report["label"] = manifest.get("label", manifest.get("mode", "run"))
        with open(run_dir / "metrics.json", "w") as fh:
            json.dump(report, fh, indent=1)
        (run_dir / "report.txt").write_text(format_report_rows([report]))
        click.echo(format_report_rows([report]))
    except VfxError as err:
        _fail(err)


def evaluate_edit(video, edited, pixel_mask, scene, plan, cfg, backend) -> dict:
    ssim = masked_ssim(edited, video, pixel_mask)
    directional = directional_score(
        video,
        edited,
        scene["caption"],
        plan["composition_prompt"],
        HistogramEmbedder(),
    )
    if backend == "remote":
        quality_backend = RemoteQualityBackend(remote_endpoint(cfg["metrics"]))
    else:
        quality_backend = StubQualityBackend(reference_masks=pixel_mask)
    quality = vlm_quality_eval(video, edited, plan["edit_object"], quality_backend)
    report = {"masked_ssim": ssim, "directional": directional}
    report.update(quality)
    return report


REPORT_COLUMNS = ("directional", "masked_ssim") + QUALITY_KEYS


def format_report_rows(reports: list) -> str:
    header = ["Method", "Directional", "SSIM", "Text Align", "Visual Quality",
              "Edit Harmonization", "Dynamics"]
    rows = [header]
    for rep in reports:
        rows.append(
            [rep.get("label", "run")]
            + [f"{rep[c]:.3f}" for c in REPORT_COLUMNS]
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows]
    return "\n".join(lines) + "\n"


@main.command()
@click.argument("runs", nargs=-1, type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def report(runs, out_path):
    """Aggregate metrics of finished runs into one table."""
    try:
        reports = []
        for run in runs:
            metrics_path = Path(run) / "metrics.json"
            if not metrics_path.exists():
                raise DependencyError(f"{run} has no metrics.json; run eval first")
            reports.append(json.loads(metrics_path.read_text()))
        table = format_report_rows(reports)
        if out_path:
            Path(out_path).write_text(table)
        click.echo(table)
    except VfxError as err:
        _fail(err)


if __name__ == "__main__":
    main()
