"""Run configuration: a nested YAML document validated against a fixed schema.

Every key has a documented default (``DEFAULTS``); subcommands adjust a few of
them (``SUBCOMMAND_DEFAULTS``).  Precedence, lowest first: schema defaults,
subcommand defaults, the config file, command-line flags.  A run manifest
is also accepted as a config file; its ``config`` section is used.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .exceptions import ConfigError

__all__ = ["SUBCOMMANDS", "PRESETS", "DEFAULTS", "SUBCOMMAND_DEFAULTS", "RunConfig", "parse_config", "load_config_file", "set_path"]

SUBCOMMANDS = ("leray", "burgers", "ns", "scheme", "lagrangian", "convergence")
PRESETS = ("taylor-green", "random-bandlimited", "random-solenoidal", "cole-hopf-1d", "heat", "random", "zero", "file")

DEFAULTS: dict = {
    "grid": {"dim": 2, "n": 64, "period": 2 * math.pi},
    "time": {"T": 1.0, "steps": 100},
    "physics": {"nu": 0.1, "alpha": 1.0},
    "truncation": {"N": 16.0, "eps": None},
    "sampling": {"M": 20000, "K": 32, "Q": 8, "seed": 0, "stream": 0, "batch_size": 64, "n_jobs": 1, "antithetic": True},
    "field": {"preset": "taylor-green", "amplitude": 1.0, "kmax": 4, "seed": 0, "path": None},
    "solver": {"mode": "exact", "tol": 1e-10, "max_iter": 200, "dealias": True, "forward": False, "snapshots": 5},
    "leray": {"estimator": "single"},
    "scheme": {"h": 0.02, "expectation": "gauss_hermite", "interpolation": "linear", "pressure": "multiplier", "M": 64, "reference": True},
    "lagrangian": {"t": 0.0, "eval_n": 16, "upsample": 2, "gauge": True, "measure_points": 0, "cells": 8},
    "convergence": {"N_list": [4.0, 16.0, 64.0, 256.0]},
    "reynolds": {"m": [1, 2], "R0": 1.0},
    "checks": {"seeds": 0, "refine": False},
    "output": {"dir": None},
}

SUBCOMMAND_DEFAULTS: dict = {
    "leray": {"field": {"preset": "taylor-green"}},
    "burgers": {
        "grid": {"dim": 1, "n": 256},
        "time": {"T": 1.0, "steps": 200},
        "physics": {"nu": 0.2, "alpha": 1.0},
        "field": {"preset": "cole-hopf-1d", "amplitude": 0.5},
    },
    "ns": {"time": {"T": 1.0, "steps": 100}},
    "scheme": {"grid": {"n": 32}, "time": {"T": 1.0}, "truncation": {"N": 16.0}},
    "lagrangian": {"time": {"T": 0.5, "steps": 100}, "sampling": {"M": 2000, "batch_size": 1000}},
    "convergence": {"time": {"T": 1.0, "steps": 100}},
}

# (kind, constraint) per leaf; kinds: pos, nonneg, int>=k, bool, choice, optpos, list
_RULES: dict = {
    "grid.dim": ("choice", (1, 2, 3)),
    "grid.n": ("int", 4),
    "grid.period": ("pos", None),
    "time.T": ("pos", None),
    "time.steps": ("int", 1),
    "physics.nu": ("pos", None),
    "physics.alpha": ("nonneg", None),
    "truncation.N": ("optgt1", None),
    "truncation.eps": ("optpos", None),
    "sampling.M": ("int", 2),
    "sampling.K": ("int", 2),
    "sampling.Q": ("int", 2),
    "sampling.seed": ("int", 0),
    "sampling.stream": ("int", 0),
    "sampling.batch_size": ("int", 1),
    "sampling.n_jobs": ("int", 1),
    "sampling.antithetic": ("bool", None),
    "field.preset": ("choice", PRESETS),
    "field.amplitude": ("real", None),
    "field.kmax": ("int", 1),
    "field.seed": ("int", 0),
    "field.path": ("optstr", None),
    "solver.mode": ("choice", ("exact", "truncated_multiplier", "monte_carlo")),
    "solver.tol": ("pos", None),
    "solver.max_iter": ("int", 1),
    "solver.dealias": ("bool", None),
    "solver.forward": ("bool", None),
    "solver.snapshots": ("int", 0),
    "leray.estimator": ("choice", ("exact", "truncated", "single", "triple", "both")),
    "scheme.h": ("pos", None),
    "scheme.expectation": ("choice", ("gauss_hermite", "monte_carlo")),
    "scheme.interpolation": ("choice", ("linear", "cubic")),
    "scheme.pressure": ("choice", ("multiplier", "mc_triple", "off")),
    "scheme.M": ("int", 2),
    "scheme.reference": ("bool", None),
    "lagrangian.t": ("nonneg", None),
    "lagrangian.eval_n": ("int", 4),
    "lagrangian.upsample": ("int", 1),
    "lagrangian.gauge": ("bool", None),
    "lagrangian.measure_points": ("int", 0),
    "lagrangian.cells": ("int", 1),
    "convergence.N_list": ("numlist", None),
    "reynolds.m": ("intlist", None),
    "reynolds.R0": ("pos", None),
    "checks.seeds": ("int", 0),
    "checks.refine": ("bool", None),
    "output.dir": ("optstr", None),
}


def _merge(base: dict, over: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        path = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(path, "unknown key")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(path, "expected a section (mapping)")
            out[k] = _merge(base[k], v, path + ".")
        else:
            if isinstance(v, dict):
                raise ConfigError(path, "expected a value, got a section")
            out[k] = v
    return out


def _is_real(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check(path: str, v):
    kind, arg = _RULES[path]
    bad = lambda msg: ConfigError(path, f"{msg}, got {v!r}")  # noqa: E731
    if kind == "pos":
        if not _is_real(v) or v <= 0:
            raise bad("must be a positive number")
        return float(v)
    if kind == "nonneg":
        if not _is_real(v) or v < 0:
            raise bad("must be a nonnegative number")
        return float(v)
    if kind == "real":
        if not _is_real(v):
            raise bad("must be a finite number")
        return float(v)
    if kind == "int":
        if isinstance(v, bool) or not isinstance(v, int) or v < arg:
            raise bad(f"must be an integer >= {arg}")
        return v
    if kind == "bool":
        if not isinstance(v, bool):
            raise bad("must be true or false")
        return v
    if kind == "choice":
        if v not in arg:
            raise bad(f"must be one of {list(arg)}")
        return v
    if kind == "optpos":
        if v is None:
            return None
        if not _is_real(v) or v <= 0:
            raise bad("must be a positive number or null")
        return float(v)
    if kind == "optgt1":
        if v is None:
            return None
        if not _is_real(v) or v <= 1:
            raise bad("must be a number > 1 or null")
        return float(v)
    if kind == "optstr":
        if v is not None and not isinstance(v, str):
            raise bad("must be a string or null")
        return v
    if kind == "numlist":
        if not isinstance(v, (list, tuple)) or len(v) < 1 or not all(_is_real(x) and x > 1 for x in v):
            raise bad("must be a nonempty list of numbers > 1")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise bad("must be strictly increasing")
        return [float(x) for x in v]
    if kind == "intlist":
        if not isinstance(v, (list, tuple)) or len(v) < 1 or not all(isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in v):
            raise bad("must be a nonempty list of nonnegative integers")
        return list(v)
    raise AssertionError(kind)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration of one run; ``data`` mirrors the YAML schema."""

    subcommand: str
    data: dict = field(repr=False)
    overrides: tuple[str, ...] = ()

    def __getitem__(self, path: str):
        node = self.data
        for part in path.split("."):
            node = node[part]
        return node

    def to_dict(self) -> dict:
        return {"subcommand": self.subcommand, **copy.deepcopy(self.data)}

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def set_path(tree: dict, path: str, value) -> None:
    """Assign ``value`` at a dotted key path, creating sections as needed."""
    parts = path.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(path, "not a section")
    node[parts[-1]] = value


def load_config_file(path) -> dict:
    """Read a YAML (or JSON) config, or the ``config`` section of a run manifest."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {p}: {exc}") from exc
    try:
        doc = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError("config", f"cannot parse {p}: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be a mapping")
    if "manifest_version" in doc:
        doc = doc.get("config", {})
    return dict(doc)


def parse_config(subcommand: str, file_data: dict | None = None, flags: dict | None = None) -> RunConfig:
    """Merge defaults, file and flags (dotted key paths) into a validated ``RunConfig``."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError("subcommand", f"must be one of {list(SUBCOMMANDS)}, got {subcommand!r}")
    data = _merge(DEFAULTS, SUBCOMMAND_DEFAULTS.get(subcommand, {}))
    file_data = dict(file_data or {})
    sub = file_data.pop("subcommand", subcommand)
    if sub != subcommand:
        raise ConfigError("subcommand", f"config is for {sub!r}, running {subcommand!r}")
    data = _merge(data, file_data)
    over = {}
    for path, value in (flags or {}).items():
        if path not in _RULES:
            raise ConfigError(path, "unknown key")
        set_path(over, path, value)
    data = _merge(data, over)
    for path in _RULES:
        set_path(data, path, _check(path, RunConfig(subcommand, data)[path]))
    cfg = RunConfig(subcommand, data, tuple(sorted((flags or {}).keys())))
    _cross_checks(cfg)
    return cfg


def _cross_checks(cfg: RunConfig) -> None:
    dim, preset = cfg["grid.dim"], cfg["field.preset"]
    if preset == "file" and not cfg["field.path"]:
        raise ConfigError("field.path", "preset 'file' needs a path")
    if preset == "taylor-green" and dim < 2:
        raise ConfigError("field.preset", "taylor-green needs grid.dim >= 2")
    if preset == "cole-hopf-1d" and dim != 1:
        raise ConfigError("field.preset", "cole-hopf-1d needs grid.dim = 1")
    if cfg.subcommand in ("ns", "scheme", "lagrangian", "convergence") and preset in ("cole-hopf-1d", "heat", "random", "random-bandlimited"):
        raise ConfigError("field.preset", f"{cfg.subcommand} needs a divergence-free preset")
    if cfg.subcommand in ("ns", "scheme", "lagrangian", "convergence") and dim < 2:
        raise ConfigError("grid.dim", f"{cfg.subcommand} needs grid.dim >= 2")
    if cfg.subcommand in ("scheme", "convergence") or cfg["solver.mode"] != "exact" or cfg["leray.estimator"] != "exact":
        if cfg["truncation.N"] is None and cfg["truncation.eps"] is None and cfg.subcommand != "convergence":
            raise ConfigError("truncation.N", "a truncation level is required")
    if cfg.subcommand == "lagrangian" and not cfg["lagrangian.t"] < cfg["time.T"]:
        raise ConfigError("lagrangian.t", "must be below time.T")
    if cfg.subcommand == "scheme":
        steps = cfg["time.T"] / cfg["scheme.h"]
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError("scheme.h", "must divide time.T")
