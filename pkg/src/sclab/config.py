"""Flat experiment configuration: documented defaults, JSON file, flag overrides."""

from __future__ import annotations

import difflib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

SEED_ENV = "SCLAB_SEED"
DEFAULT_SEED = 20240601

KINDS = ("simulate", "contraction", "supercontraction", "mixing", "invariant", "viscosity",
         "kinetic-check", "validate-hypotheses")
INITIALS = ("sin", "sin2", "zero", "step", "random")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Key:
    type: str
    default: Any
    doc: str
    nullable: bool = False


# name -> (type, default, doc).  Types: int, float, bool, str, list.
SCHEMA: dict[str, Key] = {
    "kind": Key("str", "simulate", f"experiment kind, one of {', '.join(KINDS)}"),
    # grid
    "dim": Key("int", 1, "spatial dimension (1 or 2)"),
    "extents": Key("list", None, "per-axis [a, b]; default the unit box", nullable=True),
    "cells": Key("int", 200, "cells per axis"),
    "c0": Key("float", None, "weight constant in w = c0 - sum x_i; default sum b_i + 1",
              nullable=True),
    # flux
    "q0": Key("int", 2, "flux degree: A_j(u) = (scale/d)|u|^q0 u"),
    "flux_scale": Key("float", 1.0, "flux prefactor (0 switches transport off)"),
    "experimental": Key("bool", False, "allow q0 outside the even integers >= 2"),
    # noise
    "noise": Key("bool", True, "false runs the deterministic equation"),
    "K": Key("int", 8, "number of noise modes"),
    "coef_rule": Key("str", "geometric", "mode coefficients: geometric | power"),
    "coef_ratio": Key("float", 0.5, "geometric ratio r in c_k = r^k"),
    "coef_exponent": Key("float", 1.0, "power exponent a in c_k = k^-a"),
    "sigma": Key("str", "linear", "state map sigma(u): zero | linear | tanh"),
    "alpha": Key("bool", True, "include the spatial profiles sin(k pi x)/k"),
    # solver
    "n": Key("float", 200.0, "viscosity index, nu = 1/n"),
    "dt": Key("float", None, "time step; default automatic from the CFL bound", nullable=True),
    "delta": Key("float", None, "noise base step; default dt", nullable=True),
    "theta_cfl": Key("float", 0.5, "CFL safety factor in (0, 1]"),
    "clamp": Key("float", None, "state clamp, also the CFL sup bound; default 10 max|theta|",
                 nullable=True),
    "s": Key("float", 0.0, "start time"),
    "t_end": Key("float", 1.0, "end time"),
    "record_dt": Key("float", 0.01, "spacing of recorded times"),
    # initial data
    "initial": Key("str", "sin", f"initial datum theta: {', '.join(INITIALS)}"),
    "amp": Key("float", 1.0, "amplitude of theta"),
    "initial_tilde": Key("str", "sin", "second initial datum for coupled experiments"),
    "amp_tilde": Key("float", 0.5, "amplitude of the second datum"),
    "pairs": Key("int", 5, "number of random pairs for deterministic contraction"),
    # ensemble
    "R": Key("int", 100, "ensemble size"),
    "seed": Key("int", DEFAULT_SEED, f"master seed (default from ${SEED_ENV})"),
    "threads": Key("int", 1, "worker threads (results do not depend on it)"),
    # diagnostics
    "window": Key("list", [1.0, 20.0], "decay-fit window [t_min, t_max]"),
    "decay_points": Key("int", 20, "log-spaced times used by decay fits"),
    "decay_tol": Key("float", 0.15, "decay slope must be <= -1/q0 + decay_tol"),
    "contraction_tol": Key("float", 1e-12, "relative per-step tolerance (deterministic)"),
    "ci_factor": Key("float", 2.0, "CI half-widths allowed in expectation checks"),
    "mixing_tol": Key("float", 0.2, "W1 slope must be <= -1/q0 + mixing_tol"),
    "mixing_ratio": Key("float", 0.25, "W1(t_max) / W1(t_min) must be below this"),
    "observable": Key("str", "l1w", "mixing observable: l1w | probe"),
    "probe_x": Key("float", 0.5, "probe location (first coordinate) for observable=probe"),
    "t_list": Key("list", None, "times for W1; default log-spaced in window", nullable=True),
    "shrink_factor": Key("float", 1.5, "required ledger-residual reduction under refinement"),
    "s_list": Key("list", [-1.0, -2.0, -4.0, -8.0, -16.0], "backward start times"),
    "backward_tol": Key("float", 0.2, "backward slope must be <= -1/q0 + backward_tol"),
    "n_list": Key("list", [50.0, 100.0, 200.0, 400.0], "viscosity indices for the Cauchy study"),
    "moment_n_list": Key("list", [10.0, 100.0, 1000.0], "viscosity indices for moment bounds"),
    "moment_p": Key("int", 2, "moment order p in E sup_t ||u||_p^p (2 or 4)"),
    "moment_ci": Key("float", 3.0, "allowed pairwise gap in combined CI half-widths"),
    "xi_max": Key("float", None, "xi-lattice extent; default 1.5 max|u|", nullable=True),
    "chi_pairs": Key("int", 1000, "random pairs for the chi-identity check"),
    "kinetic_levels": Key("list", [50, 100, 200, 400], "cells per level for kinetic refinement"),
    "kinetic_amp": Key("float", 0.25, "amplitude of the smooth kinetic run"),
    "kinetic_n": Key("float", 400.0, "viscosity index of the smooth kinetic run"),
    "kinetic_dt_factor": Key("float", 0.2, "kinetic runs use dt = factor * dx"),
    "kinetic_t_end": Key("float", 0.4, "horizon of the kinetic runs"),
    "kinetic_order": Key("float", 1.0, "required refinement order of the residual"),
    "zero_tol": Key("float", 1e-12, "bound on the zero-trajectory residual"),
    "sample_range": Key("list", [-3.0, 3.0], "state range for hypothesis validation"),
    "n_samples": Key("int", 200, "samples for hypothesis validation"),
    "out": Key("str", "out", "output directory"),
}


def _env_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return DEFAULT_SEED
    try:
        return int(raw, 0)
    except ValueError as exc:
        raise ConfigError(f"${SEED_ENV}={raw!r} is not an integer") from exc


def defaults() -> dict[str, Any]:
    d = {k: (json.loads(json.dumps(v.default))) for k, v in ((k, s) for k, s in SCHEMA.items())}
    d["seed"] = _env_seed()
    return d


def suggest(key: str) -> str:
    close = difflib.get_close_matches(key, list(SCHEMA), n=1, cutoff=0.5)
    if not close:
        lower = {k.lower(): k for k in SCHEMA}
        close = difflib.get_close_matches(key.lower().replace("o", "0"), list(lower), n=1,
                                          cutoff=0.5)
        close = [lower[c] for c in close]
    return f"; did you mean {close[0]!r}?" if close else ""


def _coerce(key: str, value: Any) -> Any:
    spec = SCHEMA[key]
    if value is None:
        if spec.nullable:
            return None
        raise ConfigError(f"{key}: null is not allowed")
    t = spec.type
    if t == "bool":
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if t == "int":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or \
                (isinstance(value, float) and not value.is_integer()):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if t == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if t == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if t == "list":
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return value
    raise AssertionError(t)


def parse_flag_value(raw: str) -> Any:
    """Flags are JSON when they parse as JSON, plain strings otherwise."""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


@dataclass
class ExperimentConfig:
    values: dict[str, Any] = field(default_factory=defaults)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def to_json(self) -> str:
        return json.dumps(self.values, indent=2, sort_keys=True) + "\n"

    @property
    def out_dir(self) -> Path:
        return Path(self.values["out"])

    def replace(self, **kw) -> "ExperimentConfig":
        v = dict(self.values)
        for k, x in kw.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown key {k!r}{suggest(k)}")
            v[k] = _coerce(k, x)
        cfg = ExperimentConfig(v)
        validate(cfg)
        return cfg


def parse_config(file: str | Path | dict | None = None,
                 overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Resolve defaults <- JSON file (path or dict) <- overrides; reject unknown keys."""
    values = defaults()
    layers = []
    if file is not None:
        if isinstance(file, dict):
            data = file
        else:
            try:
                data = json.loads(Path(file).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {file}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        layers.append(data)
    if overrides:
        layers.append(overrides)
    for layer in layers:
        for k, v in layer.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown key {k!r}{suggest(k)}")
            values[k] = _coerce(k, v)
    cfg = ExperimentConfig(values)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    v = cfg.values
    if v["kind"] not in KINDS:
        raise ConfigError(f"kind {v['kind']!r} is not one of {KINDS}")
    if v["dim"] not in (1, 2):
        raise ConfigError("dim must be 1 or 2")
    if v["cells"] < 2:
        raise ConfigError("cells must be >= 2")
    if v["extents"] is not None:
        ext = v["extents"]
        if len(ext) != v["dim"] or any(not isinstance(e, list) or len(e) != 2 for e in ext):
            raise ConfigError("extents must list one [a, b] pair per axis")
    for k in ("initial", "initial_tilde"):
        if v[k] not in INITIALS:
            raise ConfigError(f"{k} must be one of {INITIALS}")
    if not v["n"] > 0:
        raise ConfigError("n must be positive")
    if not 0 < v["theta_cfl"] <= 1:
        raise ConfigError("theta_cfl must lie in (0, 1]")
    if v["t_end"] < v["s"]:
        raise ConfigError(f"t_end={v['t_end']} precedes s={v['s']}")
    for k in ("dt", "delta", "clamp", "record_dt", "xi_max"):
        if v.get(k) is not None and not v[k] > 0:
            raise ConfigError(f"{k} must be positive")
    if v["dt"] is not None and v["delta"] is not None:
        ratio = v["dt"] / v["delta"]
        if round(ratio) < 1 or abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigError(f"dt={v['dt']} is not a positive integer multiple of delta="
                              f"{v['delta']}")
    if v["R"] < 2:
        raise ConfigError("R must be >= 2")
    if v["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    if not (0 <= v["seed"] < 2 ** 64):
        raise ConfigError("seed must be an unsigned 64-bit integer")
    w = v["window"]
    if len(w) != 2 or not 0 < w[0] < w[1]:
        raise ConfigError("window must be [t_min, t_max] with 0 < t_min < t_max")
    if v["observable"] not in ("l1w", "probe"):
        raise ConfigError("observable must be l1w or probe")
    if v["moment_p"] not in (2, 4):
        raise ConfigError("moment_p must be 2 or 4")
    if v["coef_rule"] not in ("geometric", "power"):
        raise ConfigError("coef_rule must be geometric or power (constant coefficients are "
                          "not square-summable)")
    for k in ("n_list", "moment_n_list", "s_list", "kinetic_levels", "sample_range"):
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v[k]):
            raise ConfigError(f"{k} must be a list of numbers")
    if any(not math.isfinite(float(x)) for x in v["s_list"]):
        raise ConfigError("s_list must be finite")
