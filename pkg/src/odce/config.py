"""Scenario configuration: defaults, dotted overrides and validation."""

from __future__ import annotations

import copy
import json
import math
from pathlib import Path

from .ce import CeConfig
from .odestim import CostModel

__all__ = ["ConfigError", "DEFAULTS", "load_config", "apply_override", "validate", "ce_config"]


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


DEFAULTS = {
    "p": 5,
    "seed": 0,
    "cost_model": {"kind": "affine", "a": 1.0, "b": 1.0, "gamma": 1.0},
    "prior": {"rate": 1.0, "K": None},
    "rounds": 3,
    "family": "exp",
    "mode": "static",
    "constraint": {"mode": "none", "mask": None, "K": None},
    "ce": {"N": None, "rho": 0.1, "d": 5, "alpha": 1.0, "max_iters": 500},
    "filter": {
        "M": 50,
        "steps": 10,
        "beta": 1.0,
        "capacity_factor": 3.0,
        "packet_scale": 10.0,
        "sigma": None,
        "resample_threshold": 0.5,
        "weight_mode": "scalar",
        "observe": "xi",
        "xi": {"N": None, "max_iters": 30},
    },
}


def _merge(base: dict, extra: dict, prefix=""):
    for k, v in extra.items():
        key = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(key, "unknown key")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(key, "expected an object")
            _merge(base[k], v, key + ".")
        else:
            base[k] = v


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply ``a.b.c=value``; ``value`` is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(assignment, "override must look like key=value")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for i, part in enumerate(parts[:-1]):
        if not isinstance(node.get(part), dict):
            raise ConfigError(".".join(parts[: i + 1]), "unknown section")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(key, "unknown key")
    node[parts[-1]] = _parse_value(text)


def load_config(path=None, overrides=(), seed=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("<file>", "top level must be an object")
        _merge(cfg, data)
    for ov in overrides:
        apply_override(cfg, ov)
    if seed is not None:
        cfg["seed"] = int(seed)
    validate(cfg)
    return cfg


def _need(cond, key, msg):
    if not cond:
        raise ConfigError(key, msg)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def validate(cfg: dict) -> None:
    _need(_is_int(cfg["p"]) and cfg["p"] >= 2, "p", "must be an integer >= 2")
    _need(_is_int(cfg["seed"]) and 0 <= cfg["seed"] < 2**64, "seed", "must be a 64-bit unsigned integer")
    cm = cfg["cost_model"]
    for k in ("a", "b", "gamma"):
        _need(_is_num(cm[k]), f"cost_model.{k}", "must be a number")
    try:
        CostModel(cm["kind"], cm["a"], cm["b"], cm["gamma"])
    except ValueError as exc:
        raise ConfigError("cost_model", str(exc)) from None
    n = cfg["p"] ** 2 - cfg["p"]
    _need(_is_num(cfg["prior"]["rate"]) and cfg["prior"]["rate"] > 0, "prior.rate", "must be positive")
    K0 = cfg["prior"]["K"]
    _need(K0 is None or (_is_int(K0) and 0 <= K0 <= n), "prior.K", f"must be an integer in [0, {n}]")
    _need(_is_int(cfg["rounds"]) and cfg["rounds"] >= 1, "rounds", "must be a positive integer")
    _need(cfg["family"] in ("exp", "trunc-exp"), "family", "must be 'exp' or 'trunc-exp'")
    _need(cfg["mode"] in ("static", "coupled"), "mode", "must be 'static' or 'coupled'")
    con = cfg["constraint"]
    _need(con["mode"] in ("none", "fixed-zeros", "fixed-K"), "constraint.mode", "unknown mode")
    if con["mode"] == "fixed-K":
        _need(_is_int(con["K"]) and 0 <= con["K"] <= n, "constraint.K", f"must be an integer in [0, {n}]")
    if con["mode"] == "fixed-zeros" and con["mask"] is not None:
        m = con["mask"]
        _need(isinstance(m, list) and len(m) == n and all(x in (0, 1) for x in m),
              "constraint.mask", f"must be a list of {n} zeros/ones")
    ce = cfg["ce"]
    _need(ce["N"] is None or (_is_int(ce["N"]) and ce["N"] >= 1), "ce.N", "must be a positive integer")
    _need(_is_num(ce["rho"]) and 0 < ce["rho"] < 1, "ce.rho", "must lie in (0, 1)")
    _need(_is_int(ce["d"]) and ce["d"] >= 1, "ce.d", "must be a positive integer")
    _need(_is_int(ce["max_iters"]) and ce["max_iters"] >= 1, "ce.max_iters", "must be a positive integer")
    _need(_is_num(ce["alpha"]) and 0 < ce["alpha"] <= 1, "ce.alpha", "must lie in (0, 1]")
    f = cfg["filter"]
    _need(_is_int(f["M"]) and f["M"] >= 2, "filter.M", "must be an integer >= 2")
    _need(_is_int(f["steps"]) and f["steps"] >= 1, "filter.steps", "must be a positive integer")
    _need(_is_num(f["beta"]) and f["beta"] >= 0, "filter.beta", "must be non-negative")
    _need(_is_num(f["capacity_factor"]) and f["capacity_factor"] >= 1, "filter.capacity_factor", "must be >= 1")
    _need(_is_num(f["packet_scale"]) and f["packet_scale"] > 0, "filter.packet_scale", "must be positive")
    _need(f["sigma"] is None or (_is_num(f["sigma"]) and f["sigma"] > 0), "filter.sigma", "must be positive")
    _need(_is_num(f["resample_threshold"]) and 0 <= f["resample_threshold"] <= 1,
          "filter.resample_threshold", "must lie in [0, 1]")
    _need(f["weight_mode"] in ("scalar", "per-component"), "filter.weight_mode", "unknown mode")
    _need(f["observe"] in ("xi", "loads"), "filter.observe", "must be 'xi' or 'loads'")


def ce_config(cfg: dict, workers: int = 1) -> CeConfig:
    ce = cfg["ce"]
    return CeConfig(
        N=ce["N"],
        rho=float(ce["rho"]),
        d=int(ce["d"]),
        max_iters=int(ce["max_iters"]),
        alpha=float(ce["alpha"]),
        seed=int(cfg["seed"]),
        workers=workers,
    )
