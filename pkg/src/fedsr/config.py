"""Experiment configuration: JSON documents merged over defaults.

Unknown keys are rejected, and the fully resolved document is what gets
written into a run directory.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .degradation import BLUR_RANGE, JPEG_RANGE, NOISE_RANGE, TEST_PARAMS
from .errors import InvalidArgumentError
from .federation import TrainConfig
from .model import preset
from .partition import PRESET_PROPORTIONS, DirichletParams

DEFAULTS = {
    "seed": 0,
    "data": {"hr_dir": None, "patch": 128, "stride": 64},
    "model": {"preset": "default", "features": None, "blocks": None, "scale": None},
    "train": {"rounds": 200, "local_epochs": 1, "batch_size": 16, "lr": 2e-4,
              "loss": "l1", "checkpoint_every": 0},
    "federation": {"num_clients": 16, "aggregate": "weighted"},
    "partition": {"mode": "uniform", "alpha": 0.5},
    "degradation": {
        "ranges": {"blur": list(BLUR_RANGE), "noise": list(NOISE_RANGE), "jpeg": list(JPEG_RANGE)},
        "test_params": dict(TEST_PARAMS),
    },
}

# small enough to train in minutes on one CPU core
DESK_OVERRIDES = {
    "data": {"patch": 32, "stride": 16},
    "model": {"preset": "desk"},
    "train": {"rounds": 30},
    "federation": {"num_clients": 8},
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise InvalidArgumentError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise InvalidArgumentError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def resolve(document=None, base=None) -> dict:
    cfg = _merge(base or DEFAULTS, document or {})
    model = preset(cfg["model"]["preset"], features=cfg["model"]["features"],
                   blocks=cfg["model"]["blocks"], scale=cfg["model"]["scale"])
    cfg["model"].update(features=model.features, blocks=model.blocks, scale=model.scale)
    mode = cfg["partition"]["mode"]
    if mode not in ("uniform", "dirichlet") and mode not in PRESET_PROPORTIONS:
        raise InvalidArgumentError(f"unknown partition mode {mode!r}")
    if cfg["data"]["patch"] % model.scale:
        raise InvalidArgumentError("data.patch must be divisible by the model scale")
    train_config(cfg)  # validates the training section
    return cfg


def load(path) -> dict:
    try:
        document = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path}: invalid JSON ({exc})")
    return resolve(document)


def dumps(cfg) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def train_config(cfg) -> TrainConfig:
    t = cfg["train"]
    m = cfg["model"]
    return TrainConfig(
        rounds=int(t["rounds"]), local_epochs=int(t["local_epochs"]),
        batch_size=int(t["batch_size"]), lr=float(t["lr"]),
        patch_size=int(cfg["data"]["patch"]), loss=t["loss"],
        model=preset(m["preset"], features=m["features"], blocks=m["blocks"], scale=m["scale"]),
        seed=int(cfg["seed"]), aggregate=cfg["federation"]["aggregate"],
        checkpoint_every=int(t["checkpoint_every"]),
        ranges={k: tuple(v) for k, v in cfg["degradation"]["ranges"].items()},
    )


def partition_proportions(cfg):
    p = cfg["partition"]
    if p["mode"] == "uniform":
        return "uniform"
    if p["mode"] == "dirichlet":
        alpha = p["alpha"]
        if isinstance(alpha, (int, float)):
            return DirichletParams.symmetric(float(alpha))
        return DirichletParams(tuple(alpha))
    return PRESET_PROPORTIONS[p["mode"]]
