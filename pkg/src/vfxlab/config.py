"""Application configuration: defaults, strict loading, factories.

Config files are JSON; user values deep-merge over the defaults below and
unknown keys anywhere in the tree are rejected. The chat API key is the
one thing that never lives in a file: it comes from VFXLAB_API_KEY.
"""

import copy
import json
import os
from pathlib import Path

from vfxlab.corpus import VOCAB
from vfxlab.diffusion import NoiseSchedule
from vfxlab.errors import ConfigError
from vfxlab.model import ModelConfig
from vfxlab.pipeline import EditConfig
from vfxlab.planner import RemoteEndpoint

API_KEY_ENV = "VFXLAB_API_KEY"

DEFAULT_CONFIG = {
    "paths": {
        "corpus": "runs/corpus",
        "checkpoints": "runs/checkpoint",
        "runs": "runs",
    },
    "model": {
        "blocks": 4,
        "dim": 96,
        "heads": 4,
        "patch": [1, 2, 2],
        "latent_channels": 3,
        "rope_base": 10000.0,
        "time_features": 64,
        "schedule_steps": 1000,
        "mlp_ratio": 4,
        "seed": 0,
    },
    "schedule": {"train_steps": 1000, "beta_start": 1e-4, "beta_end": 2e-2},
    "train": {"steps": 2000, "lr": 2e-3, "seed": 0},
    "edit": {
        "noise_ladder": [0.90, 0.75, 0.60, 0.45, 0.30],
        "anchor_gate": 0.50,
        "keep_fg": 0.30,
        "keep_bg": 0.05,
        "vae_factors": [2, 4, 4],
        "sample_steps": 50,
        "seed": 0,
        "guidance_scale": 1.0,
    },
    "invert": {"steps": 50},
    "planner": {
        "backend": "stub",
        "endpoint": "",
        "model": "gpt-4o",
        "timeout": 10.0,
        "retries": 2,
    },
    "metrics": {"backend": "stub", "endpoint": "", "model": "gpt-4o", "timeout": 10.0},
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {here!r} must be a table")
            out[key] = _merge(base[key], value, here)
        else:
            out[key] = value
    return out


def load_config(path=None) -> dict:
    """Defaults overlaid with an optional JSON file; unknown keys fail."""
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        user = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    return _merge(DEFAULT_CONFIG, user)


def model_config(cfg: dict, seed=None) -> ModelConfig:
    m = cfg["model"]
    return ModelConfig(
        vocab=VOCAB,
        blocks=m["blocks"],
        dim=m["dim"],
        heads=m["heads"],
        patch=tuple(m["patch"]),
        latent_channels=m["latent_channels"],
        rope_base=m["rope_base"],
        time_features=m["time_features"],
        schedule_steps=m["schedule_steps"],
        mlp_ratio=m["mlp_ratio"],
        seed=m["seed"] if seed is None else seed,
    )


def schedule_config(cfg: dict) -> NoiseSchedule:
    s = cfg["schedule"]
    return NoiseSchedule(
        train_steps=s["train_steps"],
        beta_start=s["beta_start"],
        beta_end=s["beta_end"],
    )


def edit_config(cfg: dict, seed=None) -> EditConfig:
    e = cfg["edit"]
    return EditConfig(
        noise_ladder=tuple(e["noise_ladder"]),
        anchor_gate=e["anchor_gate"],
        keep_fg=e["keep_fg"],
        keep_bg=e["keep_bg"],
        vae_factors=tuple(e["vae_factors"]),
        sample_steps=e["sample_steps"],
        seed=e["seed"] if seed is None else seed,
        guidance_scale=e["guidance_scale"],
    )


def remote_endpoint(section: dict) -> RemoteEndpoint:
    if not section["endpoint"]:
        raise ConfigError("remote backend selected but no endpoint configured")
    return RemoteEndpoint(
        url=section["endpoint"],
        model=section["model"],
        api_key=os.environ.get(API_KEY_ENV, ""),
        timeout=section["timeout"],
        retries=section.get("retries", 2),
    )
