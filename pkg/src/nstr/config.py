"""TOML run configuration: data, model, train, compare and ablate sections.

Every key is optional; missing keys take the defaults below. Schema:

    [data]    kind = chirp | warped_texture | checkerboard | image | audio
              samples, f0, f1                 (chirp)
              resolution, base_freq, warp_strength, cells   (2D fixtures)
              path                            (image / audio files)
              noise, noise_seed               (additive Gaussian noise)
    [model]   kind = nstr | fourier_mlp | siren
              n_bases, grid_resolution, latent_dim, hyper_hidden,
              flow_hidden, decoder_hidden, scalar_bottleneck, train_basis,
              omega_max, grid_init_scale      (nstr)
              n_features, sigma, hidden       (fourier_mlp)
              omega0, hidden                  (siren)
              match_params                    (baselines sized to the nstr count)
    [train]   iterations, batch_size, seed, lr, lambda_pde, lambda_smooth,
              grad_mode = fd | analytic, log_every, task = l2 | l1
    [compare] methods, sigmas, seeds, lrs (per-method learning rates)
    [ablate]  seeds, k_values, decoder_widths, lambda_values
"""
from __future__ import annotations

import copy
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "data": {
        "kind": "warped_texture",
        "samples": 2048,
        "f0": 5.0,
        "f1": 60.0,
        "resolution": 64,
        "base_freq": 3.0,
        "warp_strength": 0.8,
        "cells": 8,
        "path": None,
        "noise": 0.0,
        "noise_seed": 0,
    },
    "model": {
        "kind": "nstr",
        "n_bases": 16,
        "grid_resolution": None,
        "latent_dim": 16,
        "hyper_hidden": [64],
        "flow_hidden": [64, 64],
        "decoder_hidden": [64, 64],
        "scalar_bottleneck": False,
        "train_basis": True,
        "omega_max": None,
        "grid_init_scale": 0.1,
        "n_features": 64,
        "sigma": 10.0,
        "omega0": 30.0,
        "hidden": None,
        "match_params": True,
    },
    "train": {
        "iterations": 8000,
        "batch_size": 1024,
        "seed": 0,
        "lr": 1e-4,
        "lambda_pde": 0.1,
        "lambda_smooth": 0.0,
        "grad_mode": "fd",
        "log_every": 100,
        "task": "l2",
    },
    "compare": {
        "methods": ["nstr", "fourier_mlp", "siren"],
        "sigmas": [1.0, 10.0, 30.0],
        "seeds": [0],
        "lrs": {},
    },
    "ablate": {
        "seeds": [0, 1, 2],
        "k_values": [4, 8, 16, 32],
        "decoder_widths": [16, 32, 64],
        "lambda_values": [0.0, 0.1],
    },
}

DATA_KINDS = ("chirp", "warped_texture", "checkerboard", "image", "audio")
MODEL_KINDS = ("nstr", "fourier_mlp", "siren")


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def validate(cfg: dict) -> dict:
    for section in cfg:
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        for key in cfg[section]:
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key {section}.{key}")
    if cfg["data"]["kind"] not in DATA_KINDS:
        raise ConfigError(f"data.kind must be one of {DATA_KINDS}")
    if cfg["model"]["kind"] not in MODEL_KINDS:
        raise ConfigError(f"model.kind must be one of {MODEL_KINDS}")
    if cfg["data"]["kind"] in ("image", "audio") and not cfg["data"]["path"]:
        raise ConfigError("data.path is required for image/audio data")
    t = cfg["train"]
    if t["iterations"] < 1 or t["batch_size"] < 1:
        raise ConfigError("train.iterations and train.batch_size must be >= 1")
    if t["grad_mode"] not in ("fd", "analytic"):
        raise ConfigError("train.grad_mode must be fd or analytic")
    if t["lambda_pde"] < 0 or t["lambda_smooth"] < 0:
        raise ConfigError("loss weights must be non-negative")
    for method in cfg["compare"]["lrs"]:
        if method not in MODEL_KINDS:
            raise ConfigError(f"compare.lrs: unknown method {method!r}")
    return cfg


def resolve(override: dict | None = None) -> dict:
    return validate(merge(DEFAULTS, override or {}))


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    cfg = resolve(raw)
    path_value = cfg["data"].get("path")
    if path_value and not Path(path_value).is_absolute():
        cfg["data"]["path"] = str((path.parent / path_value).resolve())
    return cfg
