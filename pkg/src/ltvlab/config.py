"""Experiment configuration: one JSON document, versioned, with dotted overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "workers": 1,
    "systems": {
        "pendulum": {
            "system": {"system": "pendulum"},
            "task": {"x0": [3.141592653589793, 0.0], "target": [1.0471975511965976, 0.0], "horizon": 30,
                     "Q": [0.0, 0.0], "R": [0.01], "Q_T": [1000.0, 100.0], "wrap": [0]},
            "init_scale": 0.0,
            "sindy_basis": "monomial:3",
        },
        "cartpole": {
            "system": {"system": "cartpole"},
            "task": {"x0": [0.0, 3.141592653589793, 0.0, 0.0], "target": [0.0, 0.0, 0.0, 0.0], "horizon": 30,
                     "Q": [0.0, 0.0, 0.0, 0.0], "R": [0.01], "Q_T": [10000.0, 10000.0, 1000.0, 1000.0],
                     "wrap": [1]},
            "init_scale": 0.1,
            "sindy_basis": "poly_trig:3:angles=1",
        },
    },
    "ilqr": {},
    "sampling": {"n_trajectories": 2000, "split_ratio": 0.9, "distribution": "uniform"},
    "sindy": {"threshold": 0.0, "svd_cutoff": 0.0, "compare_cutoff": 1e-12, "summation": "exact"},
    "mlp": {"hidden": [32, 32], "activation": "tanh", "lr": 0.01, "epochs": 300, "batch_size": 64,
            "normalize": True, "init_seed": 0, "n_trajectories": 500},
    "swingup": {"systems": ["pendulum", "cartpole"]},
    "surrogate_bench": {"system": "pendulum", "levels": [0.0, 0.1, 0.6], "seeds": [0, 1, 2]},
    "conditioning": {
        "system": "cartpole",
        "level": 0.05,
        "bases": ["poly_trig:3:angles=1", "monomial:4"],
        "mlp_levels": [0.05, 0.15],
        "mlp_epochs": [0, 100, 300],
        "synthetic_orders": [1, 2, 3, 4, 5, 6, 7, 8],
        "synthetic_samples": 1000000,
    },
    "variance": {
        "system": "pendulum",
        "sindy_levels": [0.1, 0.6, 1.0],
        "sindy_seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
        "mlp_levels": [0.05, 0.25],
        "mlp_seeds": [0, 1, 2],
        "mlp_epoch": 100,
    },
    "control_bench": {"system": "cartpole", "level": 0.4, "init_seeds": [0, 1, 2, 3, 4], "data_seed": 0,
                      "sanity_level": 0.0},
    "plots": {"enabled": True},
}

SYSTEM_NAMES = ("pendulum", "cartpole")


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {assignment!r} must look like dotted.key=value")
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config section {key!r}")
        node = node[p]
    if parts[-1] not in node and node is not cfg.get("ilqr"):
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = _parse_value(raw)


def _merge(base: dict, new: dict, path: str = "") -> dict:
    for k, v in new.items():
        where = f"{path}{k}"
        if k not in base and path not in ("ilqr.", "systems."):
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v, where + ".")
        else:
            base[k] = v
    return base


def load_config(path=None, overrides=()) -> dict:
    cfg = default_config()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        version = user.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}; expected {SCHEMA_VERSION}")
        _merge(cfg, user)
    for o in overrides:
        apply_override(cfg, o)
    validate(cfg)
    return cfg


def _seeds(value, where, minimum=1):
    if not isinstance(value, list) or len(value) < minimum or not all(isinstance(s, int) for s in value):
        raise ConfigError(f"{where} must be a list of at least {minimum} integer seeds")


def _levels(value, where):
    if not isinstance(value, list) or not value or not all(isinstance(v, (int, float)) and v >= 0 for v in value):
        raise ConfigError(f"{where} must be a non-empty list of non-negative levels")


def validate(cfg: dict) -> None:
    """Check the referenced specs by constructing them."""
    from . import basis, dynamics, ilqr, sampling

    if not isinstance(cfg.get("workers"), int) or cfg["workers"] < 1:
        raise ConfigError("workers must be a positive integer")
    try:
        for name, sc in cfg["systems"].items():
            sys = dynamics.make_system(sc["system"])
            cost_from_config(sc["task"], sys)
            basis.parse_spec(sc["sindy_basis"], sys.n_x + sys.n_u)
        ilqr.options_from_dict(cfg["ilqr"])
        sampling.SamplingSpec(0.1, cfg["sampling"]["n_trajectories"], 0, cfg["sampling"]["split_ratio"],
                              cfg["sampling"]["distribution"])
        for b in cfg["conditioning"]["bases"]:
            basis.parse_spec(b, 5)
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"invalid config: {err}") from err
    for section in ("swingup",):
        for s in cfg[section]["systems"]:
            if s not in cfg["systems"]:
                raise ConfigError(f"{section}.systems: unknown system {s!r}")
    for section in ("surrogate_bench", "conditioning", "variance", "control_bench"):
        if cfg[section]["system"] not in cfg["systems"]:
            raise ConfigError(f"{section}.system: unknown system {cfg[section]['system']!r}")
    _levels(cfg["surrogate_bench"]["levels"], "surrogate_bench.levels")
    _seeds(cfg["surrogate_bench"]["seeds"], "surrogate_bench.seeds")
    _levels(cfg["variance"]["sindy_levels"], "variance.sindy_levels")
    _levels(cfg["variance"]["mlp_levels"], "variance.mlp_levels")
    _seeds(cfg["variance"]["sindy_seeds"], "variance.sindy_seeds", 2)
    _seeds(cfg["variance"]["mlp_seeds"], "variance.mlp_seeds", 2)
    _seeds(cfg["control_bench"]["init_seeds"], "control_bench.init_seeds")
    _levels([cfg["control_bench"]["sanity_level"]], "control_bench.sanity_level")
    m = cfg["mlp"]
    if not (m["lr"] > 0 and m["epochs"] >= 1 and all(int(h) >= 1 for h in m["hidden"])):
        raise ConfigError("mlp: need lr > 0, epochs >= 1 and positive hidden widths")


def cost_from_config(task: dict, system):
    import numpy as np

    from .ilqr import CostSpec

    n_x, n_u = system.n_x, system.n_u

    def mat(v, n):
        a = np.asarray(v, dtype=float)
        return np.diag(a) if a.ndim == 1 else a.reshape(n, n)

    x0 = np.asarray(task["x0"], dtype=float)
    if x0.shape != (n_x,):
        raise ValueError(f"task.x0 must have length {n_x}")
    return CostSpec(mat(task["Q"], n_x), mat(task["R"], n_u), mat(task["Q_T"], n_x), task["target"],
                    int(task["horizon"]), tuple(task.get("wrap", ())))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()
