"""INI run configuration.

Every key has a default except ``[model] name``; unknown sections or keys
are rejected so typos fail loudly.  Lists are comma separated, matrix rows
are separated by semicolons.

[model]       name, n, reaction_matrix, reaction_cf
[grid]        length, cells
[initial]     profile (uniform | cosine), base, amplitude, mode
[scheme]      tau, final_time, reg_enabled, picard_tol, picard_max,
              newton_fallback, continuation_eta, tau_min, entropy_tol
[experiment]  kind, seed, window_start, component, c_s, c_l, eps,
              eps_sweep, tol_a, tol_b, jitter, h_list, ref_cells, ref_tau,
              alpha_list, probe_min
[output]      directory, prefix, stride, figures
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .grid import Field, Grid1D
from .models import ModelSpec, ReactionSpec, get_model
from .stepper import SchemeParams

EXPERIMENT_KINDS = ("run", "decay", "unique", "lattice", "positivity")

DEFAULTS: Dict[str, Dict[str, str]] = {
    "model": {"name": "", "n": "2", "reaction_matrix": "", "reaction_cf": ""},
    "grid": {"length": "1.0", "cells": "200"},
    "initial": {"profile": "cosine", "base": "0.3, 0.2", "amplitude": "-0.1, 0.0", "mode": "1"},
    "scheme": {"tau": "1e-4", "final_time": "0.1", "reg_enabled": "false",
               "picard_tol": "1e-10", "picard_max": "200", "newton_fallback": "true",
               "continuation_eta": "false", "tau_min": "", "entropy_tol": "1e-9"},
    "experiment": {"kind": "run", "seed": "0", "window_start": "0.2", "component": "",
                   "c_s": "", "c_l": "", "eps": "1e-6", "eps_sweep": "false",
                   "tol_a": "1e-10", "tol_b": "1e-8", "jitter": "1e-9",
                   "h_list": "0.04, 0.02, 0.01, 0.005", "ref_cells": "400",
                   "ref_tau": "2e-5", "alpha_list": "0.5, 1, 2", "probe_min": "1e-3"},
    "output": {"directory": "out", "prefix": "run", "stride": "10", "figures": "false"},
}


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


@dataclass
class InitialSpec:
    profile: str
    base: Tuple[float, ...]
    amplitude: Tuple[float, ...]
    mode: int = 1

    def sample(self, x, length: float = 1.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        base = np.asarray(self.base, dtype=float)[:, None]
        if self.profile == "uniform":
            return np.broadcast_to(base, (base.shape[0], x.size)).copy()
        amp = np.asarray(self.amplitude, dtype=float)[:, None]
        return base + amp * np.cos(self.mode * np.pi * x[None, :] / length)


@dataclass
class ExperimentSpec:
    kind: str = "run"
    seed: int = 0
    window_start: float = 0.2
    component: Optional[int] = None
    c_s: Optional[float] = None
    c_l: Optional[float] = None
    eps: float = 1e-6
    eps_sweep: bool = False
    tol_a: float = 1e-10
    tol_b: float = 1e-8
    jitter: float = 1e-9
    h_list: Tuple[float, ...] = (0.04, 0.02, 0.01, 0.005)
    ref_cells: int = 400
    ref_tau: float = 2e-5
    alpha_list: Tuple[float, ...] = (0.5, 1.0, 2.0)
    probe_min: float = 1e-3


@dataclass
class OutputSpec:
    directory: Path = Path("out")
    prefix: str = "run"
    stride: int = 10
    figures: bool = False


@dataclass
class RunConfig:
    model_name: str
    n: int
    reaction: Optional[ReactionSpec]
    grid: Grid1D
    initial: InitialSpec
    final_time: float
    scheme: SchemeParams
    experiment: ExperimentSpec
    output: OutputSpec
    raw: Dict[str, Dict[str, str]] = field(default_factory=dict)

    def model(self) -> ModelSpec:
        return get_model(self.model_name, n=self.n, reaction=self.reaction)

    def initial_field(self) -> Field:
        values = self.initial.sample(self.grid.x, self.grid.length)
        try:
            return Field(values, self.grid)
        except ValueError as exc:
            raise ConfigError(f"initial data leaves the volume-filling set: {exc}") from exc

    def echo(self) -> Dict[str, Dict[str, str]]:
        return {sec: dict(sorted(keys.items())) for sec, keys in sorted(self.raw.items())}


def _floats(text: str, what: str) -> Tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())
    except ValueError as exc:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from exc


def _matrix(text: str) -> np.ndarray:
    rows = [_floats(r, "reaction_matrix") for r in text.split(";") if r.strip()]
    if len({len(r) for r in rows}) != 1:
        raise ConfigError("reaction_matrix rows have different lengths")
    return np.array(rows)


def _merge(parser: configparser.ConfigParser) -> Dict[str, Dict[str, str]]:
    merged = {sec: dict(keys) for sec, keys in DEFAULTS.items()}
    for sec in parser.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown section [{sec}]")
        for key, value in parser.items(sec):
            if key not in DEFAULTS[sec]:
                raise ConfigError(f"unknown key '{key}' in [{sec}]")
            merged[sec][key] = value.strip()
    return merged


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from exc
    raw = _merge(parser)
    try:
        return _build(raw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _bool(text: str, key: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _opt_float(text: str) -> Optional[float]:
    return float(text) if text else None


def _build(raw: Dict[str, Dict[str, str]]) -> RunConfig:
    m, g, ini, sc, ex, out = (raw[k] for k in ("model", "grid", "initial", "scheme",
                                                 "experiment", "output"))
    if not m["name"]:
        raise ConfigError("[model] name is required")
    n = int(m["n"])
    reaction = None
    if m["reaction_matrix"]:
        if not m["reaction_cf"]:
            raise ConfigError("reaction_matrix needs reaction_cf")
        reaction = ReactionSpec(_matrix(m["reaction_matrix"]), float(m["reaction_cf"]))
        if reaction.s.shape[0] != n:
            raise ConfigError(f"reaction_matrix is {reaction.s.shape}, model has n={n}")
    get_model(m["name"], n=n, reaction=reaction)

    grid = Grid1D(float(g["length"]), int(g["cells"]))
    profile = ini["profile"].lower()
    if profile not in ("uniform", "cosine"):
        raise ConfigError(f"unknown initial profile {profile!r}")
    base = _floats(ini["base"], "base")
    amplitude = _floats(ini["amplitude"], "amplitude") if profile == "cosine" else (0.0,) * n
    if len(base) != n or len(amplitude) != n:
        raise ConfigError(f"base and amplitude need {n} entries each")
    initial = InitialSpec(profile, base, amplitude, int(ini["mode"]))

    tau = float(sc["tau"])
    scheme = SchemeParams(
        tau=tau, reg_enabled=_bool(sc["reg_enabled"], "reg_enabled"),
        picard_tol=float(sc["picard_tol"]), picard_max=int(sc["picard_max"]),
        newton_fallback=_bool(sc["newton_fallback"], "newton_fallback"),
        continuation_eta=_bool(sc["continuation_eta"], "continuation_eta"),
        tau_min=_opt_float(sc["tau_min"]), entropy_tol=float(sc["entropy_tol"]),
        seed=int(ex["seed"]))
    final_time = float(sc["final_time"])
    if not final_time > 0:
        raise ConfigError("final_time must be positive")
    if reaction is not None and tau * reaction.cf >= 1.0:
        raise ConfigError(f"tau * reaction_cf = {tau * reaction.cf:g} must be < 1")

    kind = ex["kind"].lower()
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; choose from {EXPERIMENT_KINDS}")
    component = int(ex["component"]) if ex["component"] else None
    if component is not None and not 1 <= component <= n + 1:
        raise ConfigError(f"component must be in 1..{n + 1}")
    experiment = ExperimentSpec(
        kind=kind, seed=int(ex["seed"]), window_start=float(ex["window_start"]),
        component=component, c_s=_opt_float(ex["c_s"]), c_l=_opt_float(ex["c_l"]),
        eps=float(ex["eps"]), eps_sweep=_bool(ex["eps_sweep"], "eps_sweep"),
        tol_a=float(ex["tol_a"]), tol_b=float(ex["tol_b"]), jitter=float(ex["jitter"]),
        h_list=_floats(ex["h_list"], "h_list"), ref_cells=int(ex["ref_cells"]),
        ref_tau=float(ex["ref_tau"]), alpha_list=_floats(ex["alpha_list"], "alpha_list"),
        probe_min=float(ex["probe_min"]))
    if not 0.0 <= experiment.window_start < 1.0:
        raise ConfigError("window_start is a fraction of final_time in [0, 1)")

    output = OutputSpec(Path(out["directory"]), out["prefix"], int(out["stride"]),
                        _bool(out["figures"], "figures"))
    if output.stride < 1:
        raise ConfigError("stride must be >= 1")
    cfg = RunConfig(m["name"], n, reaction, grid, initial, final_time, scheme, experiment,
                    output, raw)
    cfg.initial_field()
    return cfg
