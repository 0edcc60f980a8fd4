"""Declarative experiment configuration (YAML).

Every random element carries its own seed, so a config file fully
determines a run. See ``configs/`` for the bundled examples.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import instances, lqr
from .closed_loop import Drift, PlantSchedule, SimConfig, drift_target, sample_x0
from .dither import Exosystem, build_exosystem
from .errors import ConfigError, RelearnError
from .linalg import zoh_discretize

BUNDLED = ("aircraft_static", "aircraft_drifting")

DEFAULTS: dict[str, Any] = {
    "cost": {"kind": "random", "seed": 0},
    "exo": {"omega1": 0.2, "amplitude": 0.01, "schedule": "paired", "seed": 0},
    "algo": {
        "gamma": 5e-4, "lambda": 0.995, "horizon": 1000,
        "x0": {"mean": 10.0, "std": 1.0, "seed": 0},
        "theta0": {"kind": "true"},
        "k0": {"kind": "dare"},
        "stability_guard": "abort",
        "jstar_cadence": 100,
    },
    "thresholds": {"j_err": 1e-3, "theta_err": 1e-3},
    "verify": {"samples": 100, "kappa": 0.1, "avg_steps": 20000, "residual_tol": 1e-8,
               "locus_tol": 1e-7, "pe_windows": 50},
    "output": {"csv": "trajectory.csv", "summary": "summary.json", "decimate": 1,
               "log_every": 0},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _matrix(value, name: str, shape=None) -> np.ndarray:
    try:
        mat = np.atleast_2d(np.asarray(value, dtype=float))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: not a numeric matrix") from exc
    if mat.ndim != 2 or not np.all(np.isfinite(mat)):
        raise ConfigError(f"{name}: expected a finite 2-D matrix")
    if shape is not None and mat.shape != shape:
        raise ConfigError(f"{name}: shape {mat.shape}, expected {shape}")
    return mat


def _get(section: dict, key: str, name: str):
    if key not in section:
        raise ConfigError(f"missing key {name}.{key}")
    return section[key]


def _seed_paths(raw: dict):
    """Yield (section, key) for every seed in the config."""
    for path in (("cost",), ("exo",), ("algo", "x0"), ("algo", "theta0"), ("drift",)):
        node = raw
        for part in path:
            node = node.get(part) if isinstance(node, dict) else None
        if isinstance(node, dict) and "seed" in node:
            yield node, "seed"


@dataclass
class ExperimentConfig:
    """Parsed config: the raw mapping plus the objects it describes."""

    raw: dict
    name: str
    theta_star: np.ndarray
    cost: lqr.CostSpec
    exo: Exosystem
    sim: SimConfig
    plant: PlantSchedule
    thresholds: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.theta_star.shape[1]

    @property
    def m(self) -> int:
        return self.theta_star.shape[0] - self.n

    @property
    def drifting(self) -> bool:
        return self.plant.drift is not None

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def seeds(self) -> dict[str, int]:
        out = {}
        for path in ("cost", "exo", "drift"):
            sec = self.raw.get(path)
            if isinstance(sec, dict) and "seed" in sec:
                out[path] = sec["seed"]
        for key in ("x0", "theta0"):
            sec = self.raw["algo"].get(key)
            if isinstance(sec, dict) and "seed" in sec:
                out[key] = sec["seed"]
        return out


def _build_plant(sec: dict) -> np.ndarray:
    kind = sec.get("kind", "discrete")
    if kind == "aircraft":
        return instances.aircraft_theta(float(sec.get("ts", instances.AIRCRAFT_TS)))
    a = _matrix(_get(sec, "a", "plant"), "plant.a")
    b = _matrix(_get(sec, "b", "plant"), "plant.b")
    if a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
        raise ConfigError(f"plant: incompatible A {a.shape} and B {b.shape}")
    if kind == "continuous":
        ts = float(_get(sec, "ts", "plant"))
        if not ts > 0:
            raise ConfigError("plant.ts must be positive")
        a, b = zoh_discretize(a, b, ts)
    elif kind != "discrete":
        raise ConfigError(f"plant.kind must be continuous, discrete or aircraft, got {kind!r}")
    return lqr.pack_theta(a, b)


def _build_cost(sec: dict, n: int, m: int) -> lqr.CostSpec:
    kind = sec.get("kind", "random")
    if kind == "random":
        return instances.random_cost(n, m, int(sec.get("seed", 0)))
    if kind == "explicit":
        q = _matrix(_get(sec, "q", "cost"), "cost.q", (n, n))
        r = _matrix(_get(sec, "r", "cost"), "cost.r", (m, m))
        return lqr.CostSpec(q, r, allow_psd=bool(sec.get("allow_psd", False)))
    raise ConfigError(f"cost.kind must be random or explicit, got {kind!r}")


def _build_exo(sec: dict, n: int, m: int) -> Exosystem:
    exo = build_exosystem(
        n, m, omega1=float(sec["omega1"]), amplitude=float(sec["amplitude"]),
        seed=int(sec["seed"]), schedule=sec.get("schedule", "paired"),
        frequencies=sec.get("frequencies"))
    if "e" in sec:
        exo = exo.with_e(_matrix(sec["e"], "exo.e", (m, exo.n_w)))
    return exo


def _build_theta0(sec: dict, theta_star: np.ndarray) -> np.ndarray:
    kind = sec.get("kind", "true")
    if kind == "true":
        return theta_star.copy()
    if kind == "perturbed":
        return instances.perturb_theta(theta_star, float(sec["scale"]), int(sec["seed"]))
    if kind == "explicit":
        return _matrix(_get(sec, "value", "algo.theta0"), "algo.theta0.value", theta_star.shape)
    raise ConfigError(f"algo.theta0.kind must be true, perturbed or explicit, got {kind!r}")


def _build_k0(sec: dict, theta0: np.ndarray, cost: lqr.CostSpec, m: int, n: int) -> np.ndarray:
    kind = sec.get("kind", "dare")
    if kind == "dare":
        return lqr.dare_solve(theta0, cost)[1]
    if kind == "explicit":
        return _matrix(_get(sec, "value", "algo.k0"), "algo.k0.value", (m, n))
    raise ConfigError(f"algo.k0.kind must be dare or explicit, got {kind!r}")


def _build_drift(sec: dict, theta_star: np.ndarray) -> Drift:
    if "theta_plus" in sec:
        plus = _matrix(sec["theta_plus"], "drift.theta_plus", theta_star.shape)
    else:
        plus = drift_target(theta_star, float(sec["sigma"]), int(sec["seed"]))
    alpha = float(_get(sec, "alpha", "drift"))
    if alpha == 0:
        raise ConfigError("drift.alpha must be nonzero")
    return Drift(plus, float(_get(sec, "t_mid", "drift")), alpha)


def parse_config(raw: dict, seed_override: int | None = None) -> ExperimentConfig:
    """Validate a config mapping and build every object it describes.

    ``seed_override`` replaces every seed in the file. Any problem raises
    ConfigError.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    raw = _merge(DEFAULTS, raw)
    if seed_override is not None:
        for node, key in _seed_paths(raw):
            node[key] = int(seed_override)
    try:
        theta_star = _build_plant(_get(raw, "plant", "config"))
        n = theta_star.shape[1]
        m = theta_star.shape[0] - n
        cost = _build_cost(raw["cost"], n, m)
        exo = _build_exo(raw["exo"], n, m)
        algo = raw["algo"]
        theta0 = _build_theta0(algo["theta0"], theta_star)
        k0 = _build_k0(algo["k0"], theta0, cost, m, n)
        x0_sec = algo["x0"]
        if "value" in x0_sec:
            x0 = np.asarray(x0_sec["value"], dtype=float).reshape(-1)
            if x0.size != n:
                raise ConfigError(f"algo.x0.value must have length {n}")
        else:
            x0 = sample_x0(n, float(x0_sec["mean"]), float(x0_sec["std"]), int(x0_sec["seed"]))
        horizon = algo["horizon"]
        if isinstance(horizon, float) and horizon.is_integer():
            horizon = int(horizon)
        if not isinstance(horizon, int) or isinstance(horizon, bool):
            raise ConfigError("algo.horizon must be an integer")
        sim = SimConfig(
            gamma=float(algo["gamma"]), lam=float(algo["lambda"]), horizon=horizon,
            x0=x0, k0=k0, theta0=theta0, exo=exo, stability_guard=algo["stability_guard"],
            jstar_cadence=int(algo["jstar_cadence"]))
        drift = _build_drift(raw["drift"], theta_star) if raw.get("drift") else None
    except ConfigError:
        raise
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed config: {exc!r}") from exc
    except (ValueError, RelearnError) as exc:
        raise ConfigError(str(exc)) from exc
    out = raw["output"]
    if not isinstance(out.get("decimate"), int) or out["decimate"] < 1:
        raise ConfigError("output.decimate must be a positive integer")
    for key in ("j_err", "theta_err"):
        val = raw["thresholds"].get(key)
        if not isinstance(val, (int, float)) or not math.isfinite(val) or val <= 0:
            raise ConfigError(f"thresholds.{key} must be a positive number")
    return ExperimentConfig(
        raw=raw, name=str(raw.get("name", "experiment")), theta_star=theta_star, cost=cost,
        exo=exo, sim=sim, plant=PlantSchedule(theta_star, drift),
        thresholds=dict(raw["thresholds"]), verify=dict(raw["verify"]), output=dict(out))


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    """Load a YAML file, or a bundled config by name (``aircraft_static``)."""
    text = _read_text(path)
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(raw, seed_override)


def _read_text(path) -> str:
    if str(path) in BUNDLED:
        return bundled_path(str(path)).read_text()
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def bundled_path(name: str):
    if name not in BUNDLED:
        raise ConfigError(f"no bundled config {name!r}; choose from {BUNDLED}")
    return resources.files("relearn").joinpath("configs", f"{name}.yaml")
