"""Run configuration: flat INI sections with JSON-literal values.

Sections are ``env``, ``algo``, ``risk``, ``optimizer`` and ``run``.  Every
key must be known; values parse as JSON where possible (``0.3``,
``[0, 0.5]``, ``true``) and are otherwise kept as bare strings.
"""

from __future__ import annotations

import configparser
import copy
import json
import os
from pathlib import Path

SEED_ENV_VAR = "RISKIMIT_SEED"

DEFAULTS = {
    "env": {
        "name": "gridworld",
        "horizon": None,
        "gamma": None,
        "cost_noise": "none",
    },
    "risk": {
        "alpha": 0.3,
        "lambda": 0.5,
    },
    "algo": {
        "variant": "js_rs_gail",
        "entropy_weight": 1e-3,
        "generator_steps": None,
        "discriminator_steps": 1,
        "pretrain_iters": 0,
        "batch_size": 100,
        "policy_hidden": None,
        "disc_hidden": None,
        "clip_bound": 0.05,
        "baseline": True,
        "tail_rule": "dual",
    },
    "optimizer": {
        "policy": "kl_constrained",
        "policy_lr": 1e-3,
        "disc_lr": 1e-2,
        "max_kl": 0.01,
        "cg_iters": 10,
        "backtrack": 0.5,
        "max_backtracks": 10,
        "damping": 0.1,
        "expert_lr": 3e-2,
    },
    "run": {
        "seed": 0,
        "n_seeds": 1,
        "iterations": 300,
        "workers": 1,
        "out_dir": "runs",
        "expert_iters": 200,
        "expert_batch": 100,
        "expert_hidden": [32, 32],
        "expert_eval_every": 10,
        "expert_eval_trajectories": 200,
        "dataset_size": 100,
        "eval_trajectories": 300,
        "kmeans_k": 15,
        "aggregate_mode": "last_k",
        "aggregate_k": 100,
        "aggregate_m": 10,
        "report_format": "csv",
    },
}

ALGO_ALIASES = {"gail": "gail", "rail": "rail", "js-rs-gail": "js_rs_gail", "js_rs_gail": "js_rs_gail",
                "w-rs-gail": "w_rs_gail", "w_rs_gail": "w_rs_gail"}


class ConfigError(ValueError):
    pass


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip()


def _set(cfg: dict, dotted: str, value) -> None:
    section, _, key = dotted.partition(".")
    if section not in DEFAULTS or key not in DEFAULTS[section]:
        raise ConfigError(f"unknown config key {dotted!r}")
    cfg[section][key] = value


def load_config(path=None, overrides=(), environ=None) -> dict:
    """Defaults, then the file, then ``section.key=value`` overrides, then the seed variable."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        for section in parser.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section [{section}] in {path}")
            for key, raw in parser.items(section):
                _set(cfg, f"{section}.{key}", parse_value(raw))
    for dotted, raw in overrides:
        _set(cfg, dotted, parse_value(raw) if isinstance(raw, str) else raw)
    environ = os.environ if environ is None else environ
    if environ.get(SEED_ENV_VAR):
        try:
            cfg["run"]["seed"] = int(environ[SEED_ENV_VAR])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from exc
    variant = ALGO_ALIASES.get(str(cfg["algo"]["variant"]))
    if variant is None:
        raise ConfigError(f"unknown algorithm {cfg['algo']['variant']!r}")
    cfg["algo"]["variant"] = variant
    return cfg


def lambda_grid(cfg: dict) -> list:
    lam = cfg["risk"]["lambda"]
    grid = lam if isinstance(lam, list) else [lam]
    if not grid or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in grid):
        raise ConfigError(f"risk.lambda must be a number or a list of numbers, got {lam!r}")
    return [float(x) for x in grid]


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True)
