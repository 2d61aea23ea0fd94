"""Experiment configuration and its JSON form.

Every key is optional; omitted keys take the defaults below, which describe
the reference experiment (squeezed vacuum r=1, phi=pi/2, 12 cuts over half a
period, 600 records per cut, 100 bins on (-7, 7), ideal detection).

JSON keys::

    state:   kind ("squeezed" | "coherent" | "fock"), r, phi, alpha [re, im], n, sim_dim
    grid:    n_phases, span ("half" | "full"), phases (explicit list, overrides
             n_phases/span), x_min, x_max, n_bins, subsamples
    solver:  method ("mixed" | "pure" | "diagonal"), max_iters, tol, dilution,
             restarts, seed
    records_per_phase, seed, dim, mode ("tomography" | "random-phase"), lambda_tolerance
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .fock import SqueezeParams, StateVector, coherent_state, number_state, squeezed_vacuum
from .maxlik import SolverConfig
from .measurement import BinGrid


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class StateSpec:
    kind: str = "squeezed"
    r: float = 1.0
    phi: float = float(np.pi / 2)
    alpha: list = field(default_factory=lambda: [0.0, 0.0])
    n: int = 0
    sim_dim: int = 120

    def build(self, dim: int | None = None) -> StateVector:
        dim = self.sim_dim if dim is None else dim
        if self.kind == "squeezed":
            return squeezed_vacuum(SqueezeParams(self.r, self.phi), dim)
        if self.kind == "coherent":
            return coherent_state(complex(self.alpha[0], self.alpha[1]), dim)
        return number_state(self.n, dim)


@dataclass
class GridSpec:
    n_phases: int = 12
    span: str = "half"
    phases: list | None = None
    x_min: float = -7.0
    x_max: float = 7.0
    n_bins: int = 100
    subsamples: int = 1

    def build(self) -> BinGrid:
        if self.phases is not None:
            return BinGrid(np.asarray(self.phases, dtype=float), self.x_min, self.x_max, self.n_bins)
        span = np.pi if self.span == "half" else 2 * np.pi
        return BinGrid.uniform(self.n_phases, span, self.x_min, self.x_max, self.n_bins)


@dataclass
class SolverSpec:
    method: str = "mixed"
    max_iters: int = 20000
    tol: float = 1e-8
    dilution: float = 0.5
    restarts: int = 0
    seed: int = 0

    def build(self) -> SolverConfig:
        return SolverConfig(self.max_iters, self.tol, self.dilution, self.restarts, self.seed)


@dataclass
class ExperimentConfig:
    state: StateSpec = field(default_factory=StateSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    records_per_phase: int = 600
    seed: int = 0
    dim: int = 25
    mode: str = "tomography"
    lambda_tolerance: float = 0.05

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: expected a JSON object")
        kwargs = _fill(cls, data, "", nested={"state": StateSpec, "grid": GridSpec, "solver": SolverSpec})
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    @property
    def total_records(self) -> int:
        return self.records_per_phase * self.build_grid().n_phases

    def build_grid(self) -> BinGrid:
        return self.grid.build()

    def validate(self):
        s, g, v = self.state, self.grid, self.solver
        _choice("state.kind", s.kind, ("squeezed", "coherent", "fock"))
        _check("state.r", s.r >= 0, "must be >= 0")
        _check("state.alpha", len(s.alpha) == 2, "must be [re, im]")
        _check("state.n", 0 <= s.n < s.sim_dim, "must lie in [0, sim_dim)")
        _check("state.sim_dim", s.sim_dim >= 1, "must be >= 1")
        _choice("grid.span", g.span, ("half", "full"))
        _check("grid.n_phases", g.n_phases >= 1, "must be >= 1")
        _check("grid.n_bins", g.n_bins >= 1, "must be >= 1")
        _check("grid.x_max", g.x_max > g.x_min, "must exceed grid.x_min")
        _check("grid.subsamples", g.subsamples >= 1, "must be >= 1")
        _choice("solver.method", v.method, ("mixed", "pure", "diagonal"))
        _check("records_per_phase", self.records_per_phase >= 1, "must be >= 1")
        _check("dim", self.dim >= 1, "must be >= 1")
        _choice("mode", self.mode, ("tomography", "random-phase"))
        _check("lambda_tolerance", self.lambda_tolerance > 0, "must be > 0")
        try:
            self.build_grid()
        except ValueError as exc:
            raise ConfigError(f"grid.phases: {exc}") from None
        try:
            self.solver.build()
        except ValueError as exc:
            raise ConfigError(f"solver: {exc}") from None


_TYPES = {int: (int,), float: (int, float), str: (str,), bool: (bool,)}


def _fill(cls, data: dict, prefix: str, nested: dict | None = None) -> dict:
    nested = nested or {}
    known = {f.name: f for f in fields(cls)}
    out = {}
    for key, value in data.items():
        path = prefix + key
        if key not in known:
            raise ConfigError(f"{path}: unknown key")
        if key in nested:
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: expected an object")
            out[key] = nested[key](**_fill(nested[key], value, path + "."))
            continue
        default = getattr(cls(), key)
        out[key] = _coerce(path, value, default)
    return out


def _coerce(path: str, value, default):
    if default is None:
        if value is not None and not (isinstance(value, list) and all(_is_number(v) for v in value)):
            raise ConfigError(f"{path}: expected a list of numbers or null")
        return None if value is None else [float(v) for v in value]
    if isinstance(default, list):
        if not isinstance(value, list) or not all(_is_number(v) for v in value):
            raise ConfigError(f"{path}: expected a list of numbers")
        return [float(v) for v in value]
    kind = type(default)
    if isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"{path}: expected {kind.__name__}, got bool")
    if not isinstance(value, _TYPES[kind]):
        raise ConfigError(f"{path}: expected {kind.__name__}, got {type(value).__name__}")
    return kind(value)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check(path: str, ok: bool, message: str):
    if not ok:
        raise ConfigError(f"{path}: {message}")


def _choice(path: str, value, options):
    if value not in options:
        raise ConfigError(f"{path}: must be one of {', '.join(options)}; got {value!r}")
