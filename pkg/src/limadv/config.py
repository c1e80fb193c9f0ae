"""Experiment configuration: parsing, validation and normalization."""

from __future__ import annotations

import json
from copy import deepcopy
from dataclasses import dataclass

from .errors import InvalidInputError


class ConfigError(InvalidInputError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}" if path else msg)
        self.path = path


ADVERSARIES = {
    "constant": {"a", "b"},
    "hat": set(),
    "asymptotic_star": set(),
    "saddle": set(),
    "balanced": {"level"},
    "pair_balanced": {"pair", "c"},
    "dp": set(),
}
FORECASTERS = {
    "gradient_U": set(),
    "follow_the_leader": set(),
    "multiplicative_weights": {"eta"},
    "best_response": set(),
    "uniform": set(),
    "dp": set(),
}

# defaults double as the schema: every allowed key appears here
DEFAULTS = {
    "experts": {"mu": None},
    "game": {"M": 16, "theta": 0.1},
    "final": {"kind": "max_theta"},
    "strategy": {
        "adversary": {"kind": "asymptotic_star"},
        "forecaster": {"kind": "gradient_U"},
    },
    "sim": {"replications": 100_000, "seed": 0, "per_replication": False},
    "dp": {"extra": 0},
    "pde": {
        "grid": {"z_min": -6.0, "z_max": 6.0, "nz": 801, "nt": 4000},
        "t_out": [0.0, 0.5, 1.0],
        "points": [],
        "mc_samples": 200_000,
    },
    "experiment": {"M_list": [16, 64, 256], "delta_grid": 8},
    "output": {"path": None, "format": "csv"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict

    def __getitem__(self, dotted: str):
        node = self.data
        for part in dotted.split("."):
            node = node[part]
        return node

    @property
    def mu(self) -> list[float]:
        return self.data["experts"]["mu"]

    @property
    def theta(self) -> float:
        return self["game.theta"] if self["final.kind"] == "max_theta" else 0.0


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _merge(default: dict, given, path: str) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(path, "expected an object")
    out = deepcopy(default)
    for k, v in given.items():
        p = f"{path}.{k}" if path else k
        if k not in default:
            raise ConfigError(p, "unknown key")
        if isinstance(default[k], dict) and k not in ("adversary", "forecaster"):
            out[k] = _merge(default[k], v, p)
        else:
            out[k] = deepcopy(v)
    return out


def _strategy(v, table: dict, path: str) -> dict:
    if isinstance(v, str):
        v = {"kind": v}
    if not isinstance(v, dict) or "kind" not in v:
        raise ConfigError(path, "expected a kind name or an object with a 'kind' key")
    kind = v["kind"]
    if kind not in table:
        raise ConfigError(f"{path}.kind", f"unknown kind {kind!r}; choose from {sorted(table)}")
    for k in v:
        if k != "kind" and k not in table[kind]:
            raise ConfigError(f"{path}.{k}", f"unknown parameter for {kind!r}")
    return dict(v)


def _check_range(path, v, lo=None, hi=None, integer=False, lo_open=False, hi_open=False):
    if integer and not _is_int(v):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if not integer and not _is_num(v):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ConfigError(path, f"value {v!r} below the allowed range")
    if hi is not None and (v > hi or (hi_open and v == hi)):
        raise ConfigError(path, f"value {v!r} above the allowed range")


def _validate(d: dict) -> None:
    mu = d["experts"]["mu"]
    if mu is None:
        raise ConfigError("experts.mu", "required")
    if not isinstance(mu, list):
        raise ConfigError("experts.mu", "expected a list of accuracies")
    for i, m in enumerate(mu):
        if not _is_num(m):
            raise ConfigError(f"experts.mu[{i}]", f"expected a number, got {m!r}")
        if not (0.0 <= m <= 1.0):
            raise ConfigError(f"experts.mu[{i}]", f"value {m!r} outside [0, 1]")
    if len(mu) < 2:
        raise ConfigError("experts.mu", "need at least two experts")
    _check_range("game.M", d["game"]["M"], 0, integer=True)
    _check_range("game.theta", d["game"]["theta"], 0.0, 1.0, hi_open=True)
    if d["final"]["kind"] not in ("max", "max_theta"):
        raise ConfigError("final.kind", "must be 'max' or 'max_theta' (custom evaluators are API-only)")
    d["strategy"]["adversary"] = _strategy(d["strategy"]["adversary"], ADVERSARIES, "strategy.adversary")
    d["strategy"]["forecaster"] = _strategy(d["strategy"]["forecaster"], FORECASTERS, "strategy.forecaster")
    _check_range("sim.replications", d["sim"]["replications"], 1, integer=True)
    _check_range("sim.seed", d["sim"]["seed"], 0, 2**64 - 1, integer=True)
    if not isinstance(d["sim"]["per_replication"], bool):
        raise ConfigError("sim.per_replication", "expected true or false")
    _check_range("dp.extra", d["dp"]["extra"], 0, integer=True)
    g = d["pde"]["grid"]
    _check_range("pde.grid.z_min", g["z_min"])
    _check_range("pde.grid.z_max", g["z_max"])
    if g["z_max"] <= g["z_min"]:
        raise ConfigError("pde.grid.z_max", "must exceed z_min")
    _check_range("pde.grid.nz", g["nz"], 3, integer=True)
    _check_range("pde.grid.nt", g["nt"], 1, integer=True)
    for i, t in enumerate(d["pde"]["t_out"]):
        _check_range(f"pde.t_out[{i}]", t, 0.0, 1.0)
    for i, pt in enumerate(d["pde"]["points"]):
        if not isinstance(pt, list) or len(pt) != len(mu) + 1:
            raise ConfigError(f"pde.points[{i}]", f"expected [t, x_1..x_{len(mu)}]")
        _check_range(f"pde.points[{i}][0]", pt[0], 0.0, 1.0)
        for j, v in enumerate(pt[1:], 1):
            _check_range(f"pde.points[{i}][{j}]", v)
    _check_range("pde.mc_samples", d["pde"]["mc_samples"], 2, integer=True)
    ml = d["experiment"]["M_list"]
    if not isinstance(ml, list) or not ml:
        raise ConfigError("experiment.M_list", "expected a nonempty list")
    for i, M in enumerate(ml):
        _check_range(f"experiment.M_list[{i}]", M, 1, integer=True)
    _check_range("experiment.delta_grid", d["experiment"]["delta_grid"], 1, integer=True)
    if d["output"]["format"] not in ("csv", "json"):
        raise ConfigError("output.format", "must be 'csv' or 'json'")
    if d["output"]["path"] is not None and not isinstance(d["output"]["path"], str):
        raise ConfigError("output.path", "expected a string or null")


def normalize(raw: dict) -> dict:
    """Fill defaults, canonicalize strategy entries and coerce numeric types."""
    d = _merge(DEFAULTS, raw, "")
    _validate(d)
    d["experts"]["mu"] = [float(m) for m in d["experts"]["mu"]]
    d["game"]["theta"] = float(d["game"]["theta"])
    for k in ("z_min", "z_max"):
        d["pde"]["grid"][k] = float(d["pde"]["grid"][k])
    d["pde"]["t_out"] = [float(t) for t in d["pde"]["t_out"]]
    d["pde"]["points"] = [[float(v) for v in p] for p in d["pde"]["points"]]
    return d


def parse_config(data: bytes | str) -> ExperimentConfig:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigError("", f"config is not UTF-8: {exc}") from None
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"malformed JSON: {exc}") from None
    return ExperimentConfig(normalize(raw))
