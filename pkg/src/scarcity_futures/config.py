"""Engine configuration: a JSON document with one section per module."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .control import GridSpec
from .demand import DemandModel, RiskPrice
from .errors import ConfigError, DomainError
from .market import CostSpec, ProducerSpec, SpotMap
from .pricing import FuturesModel

BENCHMARK = {
    "demand": {"a": -1.0, "sigma": 0.2, "d0": 1.0},
    "risk": {"breakpoints": [0.0, 1.0], "lambda0": [0.1], "lambda1": [0.0]},
    "spot": {"b": 1.0, "cbar": 10.0, "eps": 1.0, "alpha_exp": 0.5, "cap_m": 9.0},
    "pricing": {"maturity": 1.0, "quad_order": 128, "mc_paths": 100000},
    "producer": {
        "c_lin": 0.0, "c_quad": 0.05, "k_lin": 0.01, "k_quad": 0.01,
        "q_max": 1.0, "u_min": -1.0, "u_max": 1.0, "x_max": 1.0, "x0": 0.0,
        "r0": 1.0, "gamma": 0.5,
    },
    "grid": {
        "r_max": 4.0, "nr": 41, "nx": 41, "nd": 61, "d_min": -1.0, "d_max": 3.0,
        "nt": None, "theta_cap": 1000.0,
    },
    "curve": {"times": [0.0, 0.25, 0.5, 0.75, 1.0], "d_min": -1.0, "d_max": 3.0, "nd": 41},
    "simulation": {"n_paths": 10000, "nt": 200, "futures_mode": "exact"},
    "seed": 12345,
    "output": "out",
}

_SECTIONS = {name: set(body) for name, body in BENCHMARK.items() if isinstance(body, dict)}
_SCALARS = {name for name, body in BENCHMARK.items() if not isinstance(body, dict)}


@dataclass(frozen=True)
class EngineConfig:
    raw: dict
    futures: FuturesModel
    producer: ProducerSpec
    grid: GridSpec

    @property
    def seed(self):
        return int(self.raw["seed"])

    @property
    def output(self):
        return Path(self.raw["output"])

    @property
    def curve(self):
        return self.raw["curve"]

    @property
    def simulation(self):
        return self.raw["simulation"]

    def to_json(self):
        return json.dumps(self.raw, indent=2, sort_keys=True) + "\n"


def _check_keys(doc):
    unknown = set(doc) - set(_SECTIONS) - _SCALARS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    for name, allowed in _SECTIONS.items():
        section = doc.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be an object")
        extra = set(section) - allowed
        if extra:
            raise ConfigError(f"unknown keys in {name!r}: {sorted(extra)}")


def _merged(doc):
    out = copy.deepcopy(BENCHMARK)
    for key, val in doc.items():
        if isinstance(val, dict):
            out[key].update(val)
        else:
            out[key] = val
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc, overrides):
    """Apply ``section.key=value`` (or ``key=value`` for top-level scalars) overrides."""
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, text = item.split("=", 1)
        value = _parse_value(text)
        parts = key.split(".")
        if len(parts) == 1:
            if parts[0] not in _SCALARS:
                raise ConfigError(f"unknown top-level key {parts[0]!r}")
            doc[parts[0]] = value
        elif len(parts) == 2:
            section, field_name = parts
            if section not in _SECTIONS or field_name not in _SECTIONS[section]:
                raise ConfigError(f"unknown config key {key!r}")
            doc.setdefault(section, {})[field_name] = value
        else:
            raise ConfigError(f"override key {key!r} is too deep")
    return doc


def build(doc):
    """Validate a (possibly partial) config document and construct the engine objects."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(doc)
    raw = _merged(doc)
    try:
        dem = DemandModel(**raw["demand"])
        risk = RiskPrice(**{k: tuple(v) for k, v in raw["risk"].items()})
        spot = SpotMap(**raw["spot"])
        pr = raw["pricing"]
        fm = FuturesModel(dem, risk, spot, float(pr["maturity"]), int(pr["quad_order"]), int(pr["mc_paths"]))
        p = dict(raw["producer"])
        cost = CostSpec(*(p.pop(k) for k in ("c_lin", "c_quad", "k_lin", "k_quad")))
        producer = ProducerSpec(cost=cost, **p)
        grid = GridSpec(T=fm.maturity, **raw["grid"])
        grid.validate_for(producer, dem.d0)
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if raw["simulation"]["futures_mode"] not in ("exact", "ito"):
        raise ConfigError("simulation.futures_mode must be 'exact' or 'ito'")
    if int(raw["simulation"]["nt"]) < 2 or int(raw["simulation"]["n_paths"]) < 2:
        raise ConfigError("simulation needs nt >= 2 and n_paths >= 2")
    if int(raw["curve"]["nd"]) < 1:
        raise ConfigError("curve.nd must be >= 1")
    if any(not 0 <= float(t) <= fm.maturity for t in raw["curve"]["times"]):
        raise ConfigError("curve.times must lie in [0, maturity]")
    return EngineConfig(raw, fm, producer, grid)


def load(path=None, overrides=()):
    doc = {} if path is None else json.loads(Path(path).read_text())
    return build(apply_overrides(doc, overrides))
