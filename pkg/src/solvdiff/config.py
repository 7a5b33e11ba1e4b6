"""JSON run configuration for the command-line front end.

A configuration is one self-describing JSON document.  Every block is
validated on load and unknown keys are rejected, so that a run is fully
determined by the file (plus the ``--seed`` override).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any

from .transform import Family, MapSpec
from .underlying import Kind, UnderlyingModel

SCHEMA_VERSION = 1

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "GridConfig",
    "ToleranceConfig",
    "SimulationConfig",
    "CalibrationConfig",
    "DensityConfig",
    "GreensConfig",
    "OutputConfig",
    "RunConfig",
    "load",
]


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


def _take(block: Any, name: str, allowed: dict[str, Any], required: tuple[str, ...] = ()) -> dict:
    """Check keys of ``block`` against ``allowed`` (name -> default)."""
    if not isinstance(block, dict):
        raise ConfigError(f"{name} must be a JSON object")
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(unknown)}")
    missing = [k for k in required if k not in block]
    if missing:
        raise ConfigError(f"missing key(s) in {name}: {', '.join(missing)}")
    return {k: block.get(k, d) for k, d in allowed.items()}


def _num(v, name: str, positive: bool = False, allow_none: bool = False) -> float | None:
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(f"{name} must be finite")
    if positive and not v > 0:
        raise ConfigError(f"{name} must be positive")
    return v


def _int(v, name: str, minimum: int = 0) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}")
    return v


# ----------------------------------------------------------------------------
# Model and map blocks
# ----------------------------------------------------------------------------

def _model(block) -> UnderlyingModel:
    d = _take(block, "model", {"kind": None, "nu0": None, "lambda0": 0.0, "lambda1": None}, ("kind", "nu0"))
    try:
        kind = Kind(d["kind"].upper() if isinstance(d["kind"], str) else d["kind"])
    except ValueError:
        raise ConfigError(f"model.kind must be one of {[k.value for k in Kind]}") from None
    try:
        return UnderlyingModel(kind, _num(d["nu0"], "model.nu0"), _num(d["lambda0"], "model.lambda0"),
                               _num(d["lambda1"], "model.lambda1", allow_none=True))
    except ValueError as e:
        raise ConfigError(f"model: {e}") from None


# slot that a single ``q`` fills for the families with one active q
_Q_SLOT = {Family.F1P: "q2", Family.F1M: "q1", Family.F2P: "q1", Family.F2M: "q2",
           Family.F3P: "q2", Family.F3M: "q1"}


def _map(block) -> MapSpec:
    keys = {"family": "GENERAL", "rho": None, "a": 0.0, "b": None, "c": None, "c1": None, "c2": None,
            "q": None, "q1": None, "q2": None, "epsilon": 1}
    d = _take(block, "map", keys, ("family", "rho", "b"))
    try:
        fam = Family(d["family"])
    except ValueError:
        raise ConfigError(f"map.family must be one of {[f.value for f in Family]}") from None
    vals = {k: _num(d[k], f"map.{k}", allow_none=True) for k in ("rho", "a", "b", "c", "c1", "c2", "q", "q1", "q2")}
    if vals["c"] is not None:
        if vals["c1"] is not None or vals["c2"] not in (None, 0.0):
            raise ConfigError("map: give either c or c1/c2")
        vals["c1"], vals["c2"] = vals["c"], 0.0
    if vals["q"] is not None:
        slot = _Q_SLOT.get(fam)
        if slot is None or vals["q1"] is not None or vals["q2"] is not None:
            raise ConfigError("map: a single q is only accepted for F1, F2 and F3 without q1/q2")
        vals[slot] = vals["q"]
    eps = d["epsilon"]
    if eps not in (1, -1) or isinstance(eps, bool):
        raise ConfigError("map.epsilon must be +1 or -1")
    try:
        return MapSpec(rho=vals["rho"], b=vals["b"], a=vals["a"], q1=vals["q1"] or 0.0, q2=vals["q2"] or 0.0,
                       c1=vals["c1"] or 0.0, c2=vals["c2"] or 0.0, family=fam, epsilon=eps)
    except ValueError as e:
        raise ConfigError(f"map: {e}") from None


def _model_dict(m: UnderlyingModel) -> dict:
    return {"kind": m.kind.value, "nu0": m.nu0, "lambda0": m.lambda0, "lambda1": m.lambda1}


def _map_dict(s: MapSpec) -> dict:
    return {"family": s.family.value, "rho": s.rho, "a": s.a, "b": s.b, "c1": s.c1, "c2": s.c2,
            "q1": s.q1, "q2": s.q2, "epsilon": s.epsilon}


# ----------------------------------------------------------------------------
# Remaining blocks
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class GridConfig:
    """Evaluation grid in ``F`` (volcurve, density) or ``x`` (greens)."""

    variable: str = "F"
    lo: float | None = None
    hi: float | None = None
    n: int = 101
    spacing: str = "linear"

    @classmethod
    def parse(cls, block) -> "GridConfig":
        d = _take(block, "grid", {f.name: f.default for f in dataclasses.fields(cls)})
        if d["variable"] not in ("F", "x"):
            raise ConfigError("grid.variable must be 'F' or 'x'")
        if d["spacing"] not in ("linear", "log"):
            raise ConfigError("grid.spacing must be 'linear' or 'log'")
        lo, hi = _num(d["lo"], "grid.lo", allow_none=True), _num(d["hi"], "grid.hi", allow_none=True)
        n = _int(d["n"], "grid.n", 1)
        if lo is not None and hi is not None and (hi < lo or (n > 1 and hi == lo)):
            raise ConfigError("grid needs lo < hi (or lo = hi with n = 1)")
        if d["spacing"] == "log" and lo is not None and not lo > 0:
            raise ConfigError("log spacing needs lo > 0")
        return cls(d["variable"], lo, hi, n, d["spacing"])


@dataclass(frozen=True)
class ToleranceConfig:
    quadrature: float = 1e-10
    root: float = 1e-12

    @classmethod
    def parse(cls, block) -> "ToleranceConfig":
        d = _take(block, "tolerance", {"quadrature": 1e-10, "root": 1e-12})
        return cls(_num(d["quadrature"], "tolerance.quadrature", True), _num(d["root"], "tolerance.root", True))


@dataclass(frozen=True)
class SimulationConfig:
    times: tuple[float, ...] = (1.0,)
    f0: float | None = None
    paths: int = 100
    seed: int = 0
    workers: int = 1

    @classmethod
    def parse(cls, block) -> "SimulationConfig":
        d = _take(block, "simulation", {"times": [1.0], "f0": None, "paths": 100, "seed": 0, "workers": 1})
        if not isinstance(d["times"], list) or not d["times"]:
            raise ConfigError("simulation.times must be a non-empty list")
        times = tuple(_num(t, "simulation.times", True) for t in d["times"])
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("simulation.times must be strictly increasing")
        return cls(times, _num(d["f0"], "simulation.f0", allow_none=True), _int(d["paths"], "simulation.paths", 1),
                   _int(d["seed"], "simulation.seed"), _int(d["workers"], "simulation.workers", 1))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["times"] = list(self.times)
        return d


@dataclass(frozen=True)
class CalibrationConfig:
    """Solve one free parameter so that ``sigma(F*) / F* = target``."""

    F_star: float = 100.0
    target: float = 0.2
    param: str = "c"

    @classmethod
    def parse(cls, block) -> "CalibrationConfig":
        d = _take(block, "calibration", {"F_star": 100.0, "target": 0.2, "param": "c"})
        if d["param"] not in ("c", "nu0"):
            raise ConfigError("calibration.param must be 'c' or 'nu0'")
        return cls(_num(d["F_star"], "calibration.F_star"), _num(d["target"], "calibration.target", True),
                   d["param"])


@dataclass(frozen=True)
class DensityConfig:
    t: float = 1.0
    F0: float | None = None

    @classmethod
    def parse(cls, block) -> "DensityConfig":
        d = _take(block, "density", {"t": 1.0, "F0": None})
        return cls(_num(d["t"], "density.t", True), _num(d["F0"], "density.F0", allow_none=True))


@dataclass(frozen=True)
class GreensConfig:
    x0: float = 1.0
    s: float = 1.0

    @classmethod
    def parse(cls, block) -> "GreensConfig":
        d = _take(block, "greens", {"x0": 1.0, "s": 1.0})
        return cls(_num(d["x0"], "greens.x0"), _num(d["s"], "greens.s", True))


@dataclass(frozen=True)
class OutputConfig:
    format: str = "csv"
    path: str | None = None

    @classmethod
    def parse(cls, block) -> "OutputConfig":
        d = _take(block, "output", {"format": "csv", "path": None})
        if d["format"] not in ("csv", "json"):
            raise ConfigError("output.format must be 'csv' or 'json'")
        if d["path"] is not None and not isinstance(d["path"], str):
            raise ConfigError("output.path must be a string or null")
        return cls(d["format"], d["path"])


_OPTIONAL = {
    "grid": GridConfig, "tolerance": ToleranceConfig, "simulation": SimulationConfig,
    "calibration": CalibrationConfig, "density": DensityConfig, "greens": GreensConfig, "output": OutputConfig,
}


@dataclass(frozen=True)
class RunConfig:
    model: UnderlyingModel
    map: MapSpec
    grid: GridConfig = field(default_factory=GridConfig)
    tolerance: ToleranceConfig = field(default_factory=ToleranceConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    calibration: CalibrationConfig | None = None
    density: DensityConfig = field(default_factory=DensityConfig)
    greens: GreensConfig = field(default_factory=GreensConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        allowed = {"schema_version": None, "model": None, "map": None, **{k: None for k in _OPTIONAL}}
        d = _take(doc, "config", allowed, ("schema_version", "model", "map"))
        if d["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {d['schema_version']!r} (expected {SCHEMA_VERSION})")
        kw = {k: parser.parse(d[k]) for k, parser in _OPTIONAL.items() if d[k] is not None}
        return cls(_model(d["model"]), _map(d["map"]), **kw)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        d = {"schema_version": SCHEMA_VERSION, "model": _model_dict(self.model), "map": _map_dict(self.map)}
        for k in _OPTIONAL:
            v = getattr(self, k)
            if v is not None:
                d[k] = v.to_dict() if hasattr(v, "to_dict") else dataclasses.asdict(v)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, simulation=dataclasses.replace(self.simulation, seed=int(seed)))


def load(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return RunConfig.from_json(fh.read())
