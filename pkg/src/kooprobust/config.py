"""Experiment configuration: loading, validation, hashing, seed streams."""
from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources

import numpy as np

REQUIRED = {
    "plant": None,
    "seed": None,
    "dictionary": ("max_degree", "domain", "grid_density"),
    "weights": ("Qbar", "R"),
    "collection": ("T", "sample_dt", "samples_per_segment", "init_box", "excitation", "noise"),
    "identification": ("lp_weights", "rank_tol"),
    "noise_envelope": ("rule", "amplitude"),
    "solver": ("epsilon", "nu", "rho", "rho_prime", "Nc", "max_iter"),
    "evaluation": ("initial_states", "horizon", "step"),
}

# named random sub-streams, so each stage can be rerun on its own
STREAMS = {"collection": 1, "collocation": 2, "montecarlo": 3, "probe": 4}


class ConfigError(ValueError):
    pass


def default_config_path():
    return resources.files("kooprobust") / "data" / "benchmark.json"


def load_config(path=None, seed=None):
    src = default_config_path() if path is None else path
    with open(src) as fh:
        cfg = json.load(fh)
    if seed is not None:
        cfg["seed"] = int(seed)
    validate(cfg)
    return cfg


def validate(cfg):
    missing = []
    for key, sub in REQUIRED.items():
        if key not in cfg:
            missing.append(key)
            continue
        for s in sub or ():
            if s not in cfg[key]:
                missing.append(f"{key}.{s}")
    if missing:
        raise ConfigError("config is missing: " + ", ".join(missing))
    if cfg["collection"]["T"] < 1:
        raise ConfigError("collection.T must be positive")
    return cfg


def canonical(cfg):
    c = copy.deepcopy(cfg)
    c.pop("output", None)
    return json.dumps(c, sort_keys=True, separators=(",", ":"))


def config_hash(cfg):
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()[:16]


def rng(cfg, stream):
    return np.random.default_rng([int(cfg["seed"]), STREAMS[stream]])
