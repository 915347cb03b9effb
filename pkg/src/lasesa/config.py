"""Run configuration: one JSON document binding every stage's parameters.

The document has fixed sections; unknown sections or keys are rejected.
Missing keys take the defaults in :data:`DEFAULTS`, which describe the
desk-scale phantom protocol. Overrides use dotted keys, e.g.
``train.iterations=500`` or ``lambdas.lambda_la=0.02``; values are parsed as
JSON when possible and kept as strings otherwise.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict
from pathlib import Path

from .losses import LambdaSet
from .network import NetworkConfig
from .phantom import PhantomConfig
from .training import VARIANTS, TrainConfig


class ConfigError(ValueError):
    pass


_PHANTOM = asdict(PhantomConfig(
    dims=(24, 24, 24),
    noise_sigma=0.12,
    n_confounders=(1, 3),
    confounder_radius=(2.0, 3.5),
))

DEFAULTS = {
    "data": {
        "n_cases": 12,
        "n_train": 8,  # first n_train cases train, the rest test
        "seed": 100,  # case i uses seed + i
    },
    "phantom": {k: list(v) if isinstance(v, tuple) else v for k, v in _PHANTOM.items()},
    "network": {
        "base_channels": 4,
        "depth": 2,
    },
    "train": {
        "variant": "MTL-SESA",
        "lr0": 1e-5,  # losses are voxel sums; see README
        "lr_decay_every": 4000,
        "lr_decay_factor": 10.0,
        "momentum": 0.9,
        "weight_decay": 1e-4,
        "lambda_factor": 1.1,
        "lambda_every": 200,
        "iterations": 1000,
        "seed": 0,
        "beta": 1.0,
        "thickness": 1,  # attention band for M1 / M2
        "clip_norm": 1000.0,  # keeps the first summed-loss steps from killing ReLUs
    },
    "lambdas": {
        "lambda_la": 0.01,
        "lambda_scar": 10.0,
        "lambda_m1": 0.01,
        "lambda_m2": 0.001,
    },
    "eval": {
        "d_max": 5.0,  # mm, projection cutoff
        "band_thickness": 1,  # wall band that predicted scar is restricted to
    },
    "baseline": {
        "methods": ["otsu", "mgmm"],
        "band_thickness": 2,
        "K": 4,
        "n_scar_components": 1,
        "seed": 0,
    },
    "ablate": {
        "variants": sorted(VARIANTS),
        "seeds": [0, 1, 2],
        "heads": None,  # e.g. ["la"] to train only the LA half of single-task variants
    },
    "beta_study": {
        "betas": [0.5, 1.0, 2.0, 3.0],
        "seeds": [0],
        "variant": "single-task-SE",
    },
}


def _merge(base, update, where=""):
    for key, value in update.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be a section")
            _merge(base[key], value, path + ".")
        else:
            base[key] = value


def parse_override(text):
    """``"a.b=value"`` -> ``({"a": {"b": value}})``."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"override key {key!r} must be section.name")
    return {parts[0]: {parts[1]: value}}


def load_config(path=None, overrides=()):
    """Defaults, then the JSON file at ``path``, then ``overrides``; validated."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config root must be an object")
        _merge(cfg, doc)
    for text in overrides:
        _merge(cfg, parse_override(text))
    validate(cfg)
    return cfg


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def phantom_config(cfg):
    return PhantomConfig(**cfg["phantom"])


def network_config(cfg):
    return NetworkConfig(dims=tuple(cfg["phantom"]["dims"]), **cfg["network"])


def train_config(cfg, **changes):
    t = dict(cfg["train"])
    t.pop("variant")
    t.update(changes)
    return TrainConfig(lambdas=LambdaSet(**cfg["lambdas"]), **t)


def validate(cfg):
    """Build every typed config once so bad values fail before any work starts."""
    try:
        phantom_config(cfg)
        network_config(cfg)
        train_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    d = cfg["data"]
    if not 1 <= d["n_train"] < d["n_cases"]:
        raise ConfigError("data.n_train must be in 1 .. n_cases-1")
    for v in [cfg["train"]["variant"], cfg["beta_study"]["variant"], *cfg["ablate"]["variants"]]:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; choose from {sorted(VARIANTS)}")
    for m in cfg["baseline"]["methods"]:
        if m not in ("otsu", "mgmm"):
            raise ConfigError(f"unknown baseline method {m!r}")
    if any(not b > 0 for b in cfg["beta_study"]["betas"]):
        raise ConfigError("beta_study.betas must be positive")
    if not cfg["eval"]["d_max"] > 0:
        raise ConfigError("eval.d_max must be positive")
    return cfg

