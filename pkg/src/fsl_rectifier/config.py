"""Run configuration: documented defaults plus YAML overrides.

Configs are plain nested dicts. ``load_config`` deep-merges a YAML file over
``DEFAULTS``; ``cfg_get`` reads dotted keys. Training entry points receive the
full dict and read only their section, so one file can drive a whole run.
"""

import copy
from pathlib import Path

import yaml

from .errors import ConfigError

# Image side length is fixed by the preprocessing contract.
IMAGE_SIZE = 128

DEFAULTS: dict = {
    "dataset": {
        "name": "toy",
        "root": "data",
        "clahe": False,              # enable for dark datasets (traffic); training phase only
        "clahe_clip_limit": 2.0,
        "clahe_tile_grid": 8,
        "image_size": IMAGE_SIZE,    # fixed, kept here for config echo
        "class_factor": "shape",     # which factor carries class identity: shape|style
    },
    "translator": {
        "max_iter": 100_000,
        "batch_size": 64,
        "lr": 1e-4,                  # shared by generator and discriminator
        "k_recon": 0.1,
        "k_feature_match": 0.1,
        "k_classifier": 1.0,
        "base_channels": 64,
        "content_downsamples": 2,
        "stem_stride": 1,            # 2 trades content resolution for speed
        "style_downsamples": 4,
        "n_res_blocks": 2,
        "style_dim": 256,
        "disc_channels": 64,
        "final_upsample_interp": False,
        "checkpoint_every": 5000,
        "log_every": 1,
        "seed": 0,
    },
    "selector": {
        "pool_size": 20,
        "lr": 0.001,
        "max_iter": 200,
        "batch_size": 64,
        "mode": "best",              # best|worst
        "seed": 0,
    },
    "fsl": {
        "encoder": "conv4",          # conv4|res12
        "metric": "cos",             # cos|euc
        "temperature_euc": 1.0,
        "temperature_cos": 0.1,
        "conv4_channels": 64,
        "res12_channels": [64, 160, 320, 640],
        "pretrain_epochs": 5,
        "pretrain_lr": 1e-3,
        "pretrain_batch_size": 64,
        "episodes": 2000,            # episodic training episodes
        "episode_lr": 1e-4,
        "n_way": 5,
        "k_shot": 1,
        "n_query": 5,
        "val_fraction": 0.1,
        "seed": 0,
    },
    "rectifier": {
        "mode": "style_from_train",  # style_from_train|shape_from_train
        "k": 1,
        "weighting": "simple_average",  # simple_average|explicit_beta
        "beta": None,                # used when weighting == explicit_beta
        "pool_size": 20,
        "selector_mode": "best",     # best|worst|random|none
        "use_reconstruction": True,  # baselines run on reconstructed samples
    },
    "eval": {
        "n_episodes": 5000,
        "n_way": 5,
        "k_shot": 1,
        "n_query": 1,
        "base_seed": 0,
    },
    "augment": {
        "kind": "one_shot",
        "copies": 1,
        "seed": 0,
    },
}

# Desk-scale overrides for the procedurally generated toy dataset. Widths are
# reduced so the whole stack trains in minutes on a small CPU budget.
TOY_OVERRIDES: dict = {
    "translator": {
        "max_iter": 2000,
        "batch_size": 16,
        "k_recon": 3.0,
        "base_channels": 8,
        "content_downsamples": 2,
        "stem_stride": 2,
        "style_dim": 64,
        "disc_channels": 16,
        "final_upsample_interp": True,
        "checkpoint_every": 1000,
    },
    "fsl": {
        "conv4_channels": 32,
        "pretrain_epochs": 3,
        "episodes": 600,
    },
    "eval": {
        "n_episodes": 2000,
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    """Return a new dict with ``override`` merged recursively over ``base``."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def default_config(toy: bool = False) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if toy:
        cfg = deep_merge(cfg, TOY_OVERRIDES)
    return cfg


def load_config(path: str | Path | None, toy: bool = False) -> dict:
    """Load YAML overrides on top of the defaults.

    ``path`` may be None for pure defaults. Unknown keys are kept verbatim so
    experiment plans can stash extra fields.
    """
    cfg = default_config(toy=toy)
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        override = yaml.safe_load(fh) or {}
    if not isinstance(override, dict):
        raise ConfigError(f"config file must hold a mapping: {path}")
    return deep_merge(cfg, override)


def cfg_get(cfg: dict, dotted: str):
    """Read ``cfg`` by dotted key, e.g. ``cfg_get(cfg, "selector.pool_size")``."""
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"missing config key: {dotted}")
        node = node[part]
    return node
