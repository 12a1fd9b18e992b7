"""Run configuration: one YAML file drives every pipeline stage.

The file is validated strictly (unknown keys are rejected, naming the
offending key), merged over defaults, and hashed; artifact filenames and
provenance records carry the hash so any output can be regenerated from
its config alone. CLI overrides use dotted paths (``--set vae.epochs=5``).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import replace
from pathlib import Path

import yaml

from .exceptions import ConfigError
from .generator import GenConfig
from .pvae import PVAEConfig
from .retrieval import EvalConfig
from .seeding import substream_seed
from .synthdata import CorpusConfig, NoiseSpec

DEFAULTS: dict = {
    "seed": 0,
    "out_dir": "runs/default",
    "synth": {
        "size": 200,
        "length_min": 64,
        "length_max": 64,
        "fps": 20.0,
        "noise": {
            "target_full_body_fraction": None,
            "target_cell_noise": None,
            "kinds": ["jitter", "freeze", "drift"],
            "part_probability": 0.5,
            "jitter_sigma": 0.08,
            "drift_sigma": 0.025,
            "confidence_low": 0.3,
            "confidence_floor": 0.05,
            "min_window": 8,
        },
    },
    "curate": {"tau": 0.5, "cutoff_hz": 6.0},
    "vae": {
        "latent_dim": 16,
        "hidden": 128,
        "part_embed_dim": 8,
        "downsample": 1,
        "kl_weight": 0.01,
        "lr": 1e-3,
        "epochs": 200,
        "batch_size": 32,
        "val_fraction": 0.1,
        "tau": 0.5,
        "root_gain": 3.0,
        "lr_schedule": "cosine",
        "variant": "shared",
        "ignore_credibility": False,
    },
    "gen": {
        "d_model": 128,
        "layers": 4,
        "heads": 4,
        "ffw": 512,
        "text_dim": 32,
        "max_frames": 512,
        "timesteps": 100,
        "beta_start": 1e-4,
        "beta_end": 0.1,
        "denoiser_width": 256,
        "denoiser_depth": 3,
        "time_embed_dim": 64,
        "head": "diffusion",
        "masking_law": "normalized",
        "alpha_min": 0.5,
        "alpha_max": 1.0,
        "t_samples": 4,
        "lr": 1e-3,
        "epochs": 120,
        "batch_size": 16,
        "decode_steps": 8,
        "ddpm_steps": 25,
        "ignore_credibility": False,
    },
    "eval": {
        "embed_dim": 32,
        "motion_hidden": 96,
        "text_dim": 32,
        "text_hidden": 64,
        "lr": 1e-3,
        "epochs": 60,
        "batch_size": 32,
        "val_fraction": 0.15,
        "samples_per_prompt": 3,
        "real_size": 120,
        "length": 64,
    },
    "sample": {"length": 64, "decode_steps": 8, "ddpm_steps": 25},
    "sweep": {"proportions": [1.0, 0.6, 0.3], "corpus_size": 120},
    "ablate": {"noise": 0.4, "corpus_size": 120},
}

NOISE_PROFILES = {
    "clean": {"target_cell_noise": 0.0, "target_full_body_fraction": None},
    "web24": {"target_full_body_fraction": 0.24, "target_cell_noise": None},
    "noisy40": {"target_cell_noise": 0.4, "target_full_body_fraction": None},
}


def _merge(defaults, override, path=""):
    if not isinstance(override, dict):
        raise ConfigError(f"section {path or '<root>'} must be a mapping")
    out = {}
    for key, default in defaults.items():
        if key in override:
            value = override[key]
            if isinstance(default, dict) and default:
                out[key] = _merge(default, value, f"{path}{key}.")
            else:
                out[key] = value
        else:
            out[key] = default
    for key in override:
        if key not in defaults:
            raise ConfigError(f"unknown config key: {path}{key}")
    return out


def load_config(path=None, overrides: list[str] | None = None) -> dict:
    """Resolve a YAML config file plus dotted overrides over the defaults."""
    user: dict = {}
    if path is not None:
        with open(path) as fh:
            user = yaml.safe_load(fh) or {}
    config = _merge(DEFAULTS, user)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        dotted, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        node = config
        keys = dotted.split(".")
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise ConfigError(f"unknown config key: {dotted}")
            node = node[key]
        if keys[-1] not in node:
            raise ConfigError(f"unknown config key: {dotted}")
        node[keys[-1]] = value
    return config


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:8]


# ---------------------------------------------------------------------------
# Adapters from the resolved dict to stage dataclasses


def corpus_config(config: dict) -> CorpusConfig:
    s = config["synth"]
    noise = NoiseSpec(**s["noise"])
    noise.kinds = tuple(noise.kinds)
    return CorpusConfig(
        size=s["size"],
        length_min=s["length_min"],
        length_max=s["length_max"],
        fps=s["fps"],
        seed=substream_seed(config["seed"], "corpus"),
        noise=noise,
    )


def vae_config(config: dict) -> PVAEConfig:
    return PVAEConfig(seed=substream_seed(config["seed"], "vae"), **config["vae"])


def gen_config(config: dict, latent_dim: int, num_parts: int) -> GenConfig:
    return GenConfig(
        latent_dim=latent_dim,
        num_parts=num_parts,
        seed=substream_seed(config["seed"], "gen"),
        **config["gen"],
    )


def eval_config(config: dict) -> EvalConfig:
    e = dict(config["eval"])
    for extra in ("samples_per_prompt", "real_size", "length"):
        e.pop(extra)
    return EvalConfig(seed=substream_seed(config["seed"], "eval"), **e)


def pipeline_scale(config: dict):
    from .evaluation import PipelineScale

    return PipelineScale(
        corpus_size=config["sweep"]["corpus_size"],
        length=config["synth"]["length_min"],
        real_size=config["eval"]["real_size"],
        vae=vae_config(config),
        gen=GenConfig(seed=substream_seed(config["seed"], "gen"), **config["gen"]),
        evaluator=eval_config(config),
        samples_per_prompt=config["eval"]["samples_per_prompt"],
        decode_steps=config["gen"]["decode_steps"],
        ddpm_steps=config["gen"]["ddpm_steps"],
        seed=config["seed"],
    )


# ---------------------------------------------------------------------------
# Artifact paths and provenance


def artifact_path(config: dict, stage: str, ext: str) -> Path:
    return Path(config["out_dir"]) / f"{stage}-{config_hash(config)}.{ext}"


def ensure_new(path: Path) -> Path:
    if path.exists():
        raise FileExistsError(
            f"artifact {path} already exists; outputs are write-once "
            f"(change out_dir or remove the file)"
        )
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_provenance(path: Path, config: dict, command: str) -> None:
    from . import __version__

    record = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": config["seed"],
        "version": __version__,
    }
    prov = path.with_suffix(path.suffix + ".provenance.json")
    with open(prov, "w") as fh:
        json.dump(record, fh, sort_keys=True, indent=2)
        fh.write("\n")


def apply_noise_profile(config: dict, profile: str) -> dict:
    if profile not in NOISE_PROFILES:
        raise ConfigError(
            f"unknown noise profile {profile!r}; choose from {sorted(NOISE_PROFILES)}"
        )
    config = json.loads(json.dumps(config))
    config["synth"]["noise"].update(NOISE_PROFILES[profile])
    return config


__all__ = [
    "DEFAULTS",
    "NOISE_PROFILES",
    "load_config",
    "config_hash",
    "corpus_config",
    "vae_config",
    "gen_config",
    "eval_config",
    "pipeline_scale",
    "artifact_path",
    "ensure_new",
    "write_provenance",
    "apply_noise_profile",
    "replace",
]
