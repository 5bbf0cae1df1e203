"""Scenario configuration: a TOML file with nested sections.

Matrices are written as row-lists.  Plants are either declared inline
(``kind = "thermal"`` with coefficient matrices) or referenced by registered
name (``kind = "registered"``, see :mod:`pipbc.instances`); custom plants are
registered programmatically, never loaded from config.  Parsing normalizes
every number to float so that serialize/parse round-trips reproduce the
scenario field by field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml

from .errors import ConfigError

__all__ = ["ScenarioConfig", "parse_config", "parse_config_text", "serialize_config"]

_VARIANTS = ("robust", "ideal", "perturbed")
_METHODS = ("rk4", "euler")


def _floats(x, name) -> list[float]:
    if not isinstance(x, list) or not all(isinstance(v, (int, float)) for v in x):
        raise ConfigError(f"{name} must be a list of numbers")
    return [float(v) for v in x]


def _matrix(x, name) -> list[list[float]]:
    if not isinstance(x, list) or not x or not all(isinstance(r, list) for r in x):
        raise ConfigError(f"{name} must be a list of rows")
    rows = [_floats(r, name) for r in x]
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{name} rows must have equal length")
    return rows


@dataclass
class ScenarioConfig:
    """Plain-value scenario description; equality is field-by-field."""

    seed: int = 0
    # plant
    plant_kind: str = "thermal"
    plant_name: Optional[str] = None
    A1: Optional[list[list[float]]] = None
    A2: Optional[list[list[float]]] = None
    T_rad: Optional[list[float]] = None
    T_conv: Optional[list[float]] = None
    G: Optional[list[list[float]]] = None
    # target
    T_star: Optional[list[float]] = None
    T_a_star: Optional[list[float]] = None
    x_star: Optional[list[float]] = None
    # gains
    gamma_P: list[float] = field(default_factory=lambda: [1.0])
    gamma_I: list[float] = field(default_factory=lambda: [1.0])
    # controller
    variant: str = "robust"
    delta_ratio: Optional[float] = None
    # integrator
    h: float = 1e-3
    horizon: float = 20.0
    method: str = "rk4"
    # initial conditions
    T0: Optional[list[list[float]]] = None
    x0: Optional[list[list[float]]] = None
    z0: Union[str, list[float]] = field(default_factory=lambda: [0.0])
    # sampler (seed falls back to the scenario seed when omitted)
    sampler_count: int = 10_000
    sampler_seed: Optional[int] = None
    sampler_lo: Optional[list[float]] = None
    sampler_hi: Optional[list[float]] = None
    # sweep
    gamma_P_grid: Optional[list[float]] = None
    gamma_I_grid: Optional[list[float]] = None
    delta_ratios: Optional[list[float]] = None
    # output
    convergence_tol: float = 1e-3

    def validate(self) -> "ScenarioConfig":
        if self.plant_kind not in ("thermal", "registered"):
            raise ConfigError(f"unknown plant kind {self.plant_kind!r}")
        if self.plant_kind == "registered" and not self.plant_name:
            raise ConfigError("registered plants need a name")
        if self.plant_kind == "registered" and (
                self.T_star is not None or self.T_a_star is not None
                or self.x_star is not None):
            raise ConfigError("registered instances pin their own target")
        if self.plant_kind == "thermal" and self.plant_name is None:
            for key in ("A1", "A2", "T_rad", "T_conv", "G"):
                if getattr(self, key) is None:
                    raise ConfigError(f"inline thermal plant needs {key}")
        if self.variant not in _VARIANTS:
            raise ConfigError(f"controller variant must be one of {_VARIANTS}")
        if self.method not in _METHODS:
            raise ConfigError(f"integrator method must be one of {_METHODS}")
        if any(g <= 0 for g in self.gamma_P) or any(g <= 0 for g in self.gamma_I):
            raise ConfigError("gains must be strictly positive")
        if self.h <= 0 or self.horizon <= self.h:
            raise ConfigError("need 0 < h < horizon")
        if isinstance(self.z0, str) and self.z0 != "u_star":
            raise ConfigError("z0 must be a list of numbers or the string 'u_star'")
        if self.gamma_P_grid is not None and (
                any(g <= 0 for g in self.gamma_P_grid)
                or not self.gamma_I_grid or any(g <= 0 for g in self.gamma_I_grid)):
            raise ConfigError("sweep grids must be nonempty and strictly positive")
        for r in ([self.delta_ratio] if self.delta_ratio is not None else []) + (
                self.delta_ratios or []):
            if not 0.0 <= r < 1.0:
                raise ConfigError("delta ratios must lie in [0, 1)")
        return self


def parse_config_text(text: str) -> ScenarioConfig:
    try:
        doc = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    cfg = ScenarioConfig()

    def take(section: dict, key: str, conv, attr: str):
        if key in section:
            setattr(cfg, attr, conv(section.pop(key)))

    doc = dict(doc)
    if "seed" in doc:
        cfg.seed = int(doc.pop("seed"))

    plant = dict(doc.pop("plant", {}))
    take(plant, "kind", str, "plant_kind")
    take(plant, "name", str, "plant_name")
    take(plant, "A1", lambda v: _matrix(v, "A1"), "A1")
    take(plant, "A2", lambda v: _matrix(v, "A2"), "A2")
    take(plant, "T_rad", lambda v: _floats(v, "T_rad"), "T_rad")
    take(plant, "T_conv", lambda v: _floats(v, "T_conv"), "T_conv")
    take(plant, "G", lambda v: _matrix(v, "G"), "G")

    target = dict(doc.pop("target", {}))
    take(target, "T_star", lambda v: _floats(v, "T_star"), "T_star")
    take(target, "T_a_star", lambda v: _floats(v, "T_a_star"), "T_a_star")
    take(target, "x_star", lambda v: _floats(v, "x_star"), "x_star")

    gains = dict(doc.pop("gains", {}))
    take(gains, "gamma_P", lambda v: _floats(v, "gamma_P"), "gamma_P")
    take(gains, "gamma_I", lambda v: _floats(v, "gamma_I"), "gamma_I")

    controller = dict(doc.pop("controller", {}))
    take(controller, "variant", str, "variant")
    take(controller, "delta_ratio", float, "delta_ratio")

    integ = dict(doc.pop("integrator", {}))
    take(integ, "h", float, "h")
    take(integ, "horizon", float, "horizon")
    take(integ, "method", str, "method")

    init = dict(doc.pop("initial", {}))
    take(init, "T0", lambda v: _matrix(v, "T0"), "T0")
    take(init, "x0", lambda v: _matrix(v, "x0"), "x0")
    if "z0" in init:
        z0 = init.pop("z0")
        cfg.z0 = z0 if isinstance(z0, str) else _floats(z0, "z0")

    sampler = dict(doc.pop("sampler", {}))
    take(sampler, "count", int, "sampler_count")
    take(sampler, "seed", int, "sampler_seed")
    take(sampler, "lo", lambda v: _floats(v, "lo"), "sampler_lo")
    take(sampler, "hi", lambda v: _floats(v, "hi"), "sampler_hi")

    sweep = dict(doc.pop("sweep", {}))
    take(sweep, "gamma_P_grid", lambda v: _floats(v, "gamma_P_grid"), "gamma_P_grid")
    take(sweep, "gamma_I_grid", lambda v: _floats(v, "gamma_I_grid"), "gamma_I_grid")
    take(sweep, "delta_ratios", lambda v: _floats(v, "delta_ratios"), "delta_ratios")

    output = dict(doc.pop("output", {}))
    take(output, "convergence_tol", float, "convergence_tol")

    leftovers = [k for k in doc] + [f"{s}.{k}" for s, sec in
                 (("plant", plant), ("target", target), ("gains", gains),
                  ("controller", controller), ("integrator", integ),
                  ("initial", init), ("sampler", sampler), ("sweep", sweep),
                  ("output", output)) for k in sec]
    if leftovers:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(leftovers))}")
    return cfg.validate()


def parse_config(path) -> ScenarioConfig:
    with open(path, "rb") as fh:
        text = fh.read().decode("utf-8")
    return parse_config_text(text)


def _emit(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, int) and not isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, list):
        return "[" + ", ".join(_emit(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize value of type {type(value)!r}")


def serialize_config(cfg: ScenarioConfig) -> str:
    """Emit the scenario as TOML; parse(serialize(cfg)) == cfg."""
    sections: list[tuple[str, list[tuple[str, object]]]] = [
        ("", [("seed", cfg.seed)]),
        ("plant", [("kind", cfg.plant_kind), ("name", cfg.plant_name),
                   ("A1", cfg.A1), ("A2", cfg.A2), ("T_rad", cfg.T_rad),
                   ("T_conv", cfg.T_conv), ("G", cfg.G)]),
        ("target", [("T_star", cfg.T_star), ("T_a_star", cfg.T_a_star),
                    ("x_star", cfg.x_star)]),
        ("gains", [("gamma_P", cfg.gamma_P), ("gamma_I", cfg.gamma_I)]),
        ("controller", [("variant", cfg.variant), ("delta_ratio", cfg.delta_ratio)]),
        ("integrator", [("h", cfg.h), ("horizon", cfg.horizon), ("method", cfg.method)]),
        ("initial", [("T0", cfg.T0), ("x0", cfg.x0), ("z0", cfg.z0)]),
        ("sampler", [("count", cfg.sampler_count), ("seed", cfg.sampler_seed),
                     ("lo", cfg.sampler_lo), ("hi", cfg.sampler_hi)]),
        ("sweep", [("gamma_P_grid", cfg.gamma_P_grid),
                   ("gamma_I_grid", cfg.gamma_I_grid),
                   ("delta_ratios", cfg.delta_ratios)]),
        ("output", [("convergence_tol", cfg.convergence_tol)]),
    ]
    out = []
    for name, pairs in sections:
        pairs = [(k, v) for k, v in pairs if v is not None]
        if not pairs:
            continue
        if name:
            out.append(f"[{name}]")
        for k, v in pairs:
            out.append(f"{k} = {_emit(v)}")
        out.append("")
    return "\n".join(out)
