"""Run configuration: a YAML file with nested sections, flattened to dotted keys.

Example::

    experiment: smoke
    dim: 2
    beta: 0.5
    seed: 3
    realizations: 500
    grid: {y: 16, z: 8}
    weight: {mode: kernel, floor: 0.0}
    solver: {tol: 1.0e-10, max_iter: 5000}
    transmissibility: geometric
    inversion: {cutoff: null}
    targets: 20
    workers: 1
    output: runs/smoke
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .weighted_solver import FACE_RULES, WEIGHT_MODES

OUTPUT_ENV = "WICKPRESSURE_OUTPUT"


class ConfigError(ValueError):
    """Carries every violation found, not just the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "run"
    dim: int = 2
    grid_y: int = 32
    grid_z: int = 16
    beta: float = 0.5
    seed: int = 0
    realizations: int = 20000
    weight_mode: str = "kernel"
    weight_floor: float = 0.0
    solver_tol: float = 1e-10
    solver_max_iter: int = 5000
    transmissibility: str = "geometric"
    cutoff: int | None = None
    targets: int = 20
    workers: int = 1
    output: str | None = None

    def output_dir(self) -> Path:
        if self.output is not None:
            return Path(self.output)
        return Path(os.environ.get(OUTPUT_ENV, "runs")) / self.experiment

    def to_dict(self) -> dict:
        return {KEYS_BY_FIELD[f.name]: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "output"}

    def replace(self, **changes) -> "RunConfig":
        cfg = dataclasses.replace(self, **changes)
        check(cfg)
        return cfg


# dotted key -> (field name, accepted python types)
KEYS = {
    "experiment": ("experiment", (str,)),
    "dim": ("dim", (int,)),
    "grid.y": ("grid_y", (int,)),
    "grid.z": ("grid_z", (int,)),
    "beta": ("beta", (int, float)),
    "seed": ("seed", (int,)),
    "realizations": ("realizations", (int,)),
    "weight.mode": ("weight_mode", (str,)),
    "weight.floor": ("weight_floor", (int, float)),
    "solver.tol": ("solver_tol", (int, float)),
    "solver.max_iter": ("solver_max_iter", (int,)),
    "transmissibility": ("transmissibility", (str,)),
    "inversion.cutoff": ("cutoff", (int, type(None))),
    "targets": ("targets", (int,)),
    "workers": ("workers", (int,)),
    "output": ("output", (str, type(None))),
}
KEYS_BY_FIELD = {v[0]: k for k, v in KEYS.items()}


def flatten(data: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in data.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _even_grid(name, n, errors):
    if n < 8 or n % 2:
        errors.append(f"{name} must be an even integer >= 8, got {n}")


def violations(cfg: RunConfig) -> list[str]:
    errors = []
    if cfg.dim not in (1, 2, 3):
        errors.append(f"dim must be 1, 2 or 3, got {cfg.dim}")
    _even_grid("grid.y", cfg.grid_y, errors)
    _even_grid("grid.z", cfg.grid_z, errors)
    if cfg.grid_z > 0 and cfg.grid_y % cfg.grid_z:
        errors.append(f"grid.z = {cfg.grid_z} does not nest in grid.y = {cfg.grid_y}")
    if cfg.beta <= 0:
        errors.append("beta must be positive")
    elif cfg.beta**2 >= cfg.dim:
        errors.append(f"beta squared exceeds dimension: {cfg.beta**2:g} >= {cfg.dim}")
    if cfg.realizations < 2:
        errors.append("realizations must be at least 2")
    if cfg.weight_mode not in WEIGHT_MODES:
        errors.append(f"weight.mode must be one of {WEIGHT_MODES}, got {cfg.weight_mode!r}")
    if cfg.weight_floor < 0:
        errors.append("weight.floor must be nonnegative")
    if cfg.solver_tol <= 0:
        errors.append("solver.tol must be positive")
    if cfg.solver_max_iter < 1:
        errors.append("solver.max_iter must be at least 1")
    if cfg.transmissibility not in FACE_RULES:
        errors.append(f"transmissibility must be one of {FACE_RULES}, got {cfg.transmissibility!r}")
    if cfg.cutoff is not None and not 1 <= cfg.cutoff <= cfg.grid_z // 2:
        errors.append(f"inversion.cutoff must lie in [1, grid.z/2], got {cfg.cutoff}")
    if cfg.targets < 1:
        errors.append("targets must be at least 1")
    if cfg.workers < 1:
        errors.append("workers must be at least 1")
    if not cfg.experiment or "/" in cfg.experiment:
        errors.append("experiment must be a nonempty name without '/'")
    return errors


def check(cfg: RunConfig):
    errors = violations(cfg)
    if errors:
        raise ConfigError(errors)


def from_flat(flat: dict, base: RunConfig | None = None) -> RunConfig:
    """Build a config from dotted keys; unknown keys and bad types are collected."""
    errors, values = [], {}
    for key, val in flat.items():
        if key not in KEYS:
            errors.append(f"unknown key {key!r}")
            continue
        name, types = KEYS[key]
        if isinstance(val, bool) or not isinstance(val, types):
            errors.append(f"{key} has wrong type {type(val).__name__}")
            continue
        if float in types and isinstance(val, int):
            val = float(val)
        values[name] = val
    cfg = dataclasses.replace(base or RunConfig(), **values)
    errors += violations(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a YAML config; ``overrides`` (dotted keys) take precedence over the file."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from exc
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path} is not valid YAML: {exc}"]) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError([f"{path} must hold a mapping at top level"])
    flat = flatten(data)
    flat.update(overrides or {})
    return from_flat(flat)
