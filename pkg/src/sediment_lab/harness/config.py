"""Experiment configuration: TOML schema, validation and run manifests.

Example::

    [scenario]
    family = "inertial-stokes"   # inertialess-stokes | binary-second | binary-first | macro-reference
    T = 1.0
    dt_rule = "kappa"            # fixed | default | kappa
    dt = 0.01                    # used by "fixed" (and as the cap for "default")
    dt_kappa = 0.5               # dt = dt_kappa / rate for "kappa"
    gamma = 1.0
    g = [0.0, 0.0, -1.0]
    stride = 10
    tol = 1e-10

    [sweep]
    N = [128, 256]
    lambda_rule = "power"        # power: lambda = a N^b | list
    lambda_a = 1.0
    lambda_b = 0.5
    lambda_list = []

    [initial]
    density = "uniform-box"
    params = { half_width = 1.0 }
    dim = 3
    sampling = "grid"            # grid | iid
    velocity = "well-prepared"   # well-prepared | zero | bounded-random
    velocity_scale = 1.0

    [kernel]                     # binary families only
    form = "rotational-2d"
    alpha = 0.5
    strength = 1.0

    [reference]
    enabled = true
    M = 4096
    c_eps = 0.0

    [metrics]
    times = [1.0]
    W2 = true
    eta = true
    fluid_l2 = false
    mc_points = 2048

    seed = 0
    out = "out"

Unknown keys anywhere are errors.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

import tomli

from .. import __version__

FAMILIES = ("inertial-stokes", "inertialess-stokes", "binary-second", "binary-first", "macro-reference")


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioSection:
    family: str = "inertial-stokes"
    T: float = 1.0
    dt_rule: str = "fixed"
    dt: float = 0.01
    dt_kappa: float = 0.5
    gamma: float = 1.0
    g: list = field(default_factory=lambda: [0.0, 0.0, -1.0])
    stride: int = 10
    tol: float = 1e-10


@dataclass
class SweepSection:
    N: list = field(default_factory=lambda: [64])
    lambda_rule: str = "power"
    lambda_a: float = 1.0
    lambda_b: float = 0.5
    lambda_list: list = field(default_factory=list)


@dataclass
class InitialSection:
    density: str = "uniform-box"
    params: dict = field(default_factory=lambda: {"half_width": 1.0})
    dim: int = 3
    sampling: str = "grid"
    velocity: str = "well-prepared"
    velocity_scale: float = 1.0


@dataclass
class KernelSection:
    form: str = "rotational-2d"
    alpha: float = 0.5
    strength: float = 1.0
    axis: list = field(default_factory=lambda: [0.0, 0.0, 1.0])
    smoothing: float = 0.0


@dataclass
class ReferenceSection:
    enabled: bool = True
    M: int = 4096
    c_eps: float = 0.0


@dataclass
class MetricsSection:
    times: list = field(default_factory=lambda: [1.0])
    W2: bool = True
    eta: bool = True
    fluid_l2: bool = False
    mc_points: int = 2048


@dataclass
class ExperimentConfig:
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    initial: InitialSection = field(default_factory=InitialSection)
    kernel: KernelSection = field(default_factory=KernelSection)
    reference: ReferenceSection = field(default_factory=ReferenceSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    seed: int = 0
    out: str = "out"

    def lambdas(self) -> list:
        """(N, lambda) grid of the sweep."""
        s = self.sweep
        if s.lambda_rule == "power":
            return [(n, s.lambda_a * n**s.lambda_b) for n in s.N]
        return [(n, float(lam)) for n in s.N for lam in s.lambda_list]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def resolved(self) -> dict:
        """Everything that determines the results (the output directory does not)."""
        d = self.to_dict()
        d.pop("out")
        return d

    def content_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_SECTIONS = {"scenario": ScenarioSection, "sweep": SweepSection, "initial": InitialSection,
             "kernel": KernelSection, "reference": ReferenceSection, "metrics": MetricsSection}


def _build(cls, data: dict, where: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    obj = cls()
    for key, value in data.items():
        default = getattr(obj, key)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"[{where}] {key} must be a boolean")
        elif isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"[{where}] {key} must be a number")
            if isinstance(default, int) and not isinstance(value, int):
                raise ConfigError(f"[{where}] {key} must be an integer")
        elif isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"[{where}] {key} must be a string")
        elif isinstance(default, list) and not isinstance(value, list):
            raise ConfigError(f"[{where}] {key} must be an array")
        elif isinstance(default, dict) and not isinstance(value, dict):
            raise ConfigError(f"[{where}] {key} must be a table")
        setattr(obj, key, value)
    return obj


def from_dict(data: dict) -> ExperimentConfig:
    top = set(_SECTIONS) | {"seed", "out"}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    cfg = ExperimentConfig()
    for name, cls in _SECTIONS.items():
        if name in data:
            if not isinstance(data[name], dict):
                raise ConfigError(f"[{name}] must be a table")
            setattr(cfg, name, _build(cls, data[name], name))
    if "seed" in data:
        cfg.seed = data["seed"]
    if "out" in data:
        cfg.out = data["out"]
    validate(cfg)
    return cfg


def load(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from err
    except tomli.TOMLDecodeError as err:
        raise ConfigError(f"malformed TOML in {path}: {err}") from err
    return from_dict(data)


def validate(cfg: ExperimentConfig):
    s = cfg.scenario
    if s.family not in FAMILIES:
        raise ConfigError(f"scenario.family must be one of {FAMILIES}")
    if s.dt_rule not in ("fixed", "default", "kappa"):
        raise ConfigError("scenario.dt_rule must be fixed, default or kappa")
    if not (s.T >= 0 and s.dt > 0 and s.dt_kappa > 0 and s.gamma > 0 and s.stride >= 1 and s.tol > 0):
        raise ConfigError("scenario needs T >= 0, dt > 0, dt_kappa > 0, gamma > 0, stride >= 1, tol > 0")
    if len(s.g) != 3 or abs(math.sqrt(sum(c * c for c in s.g)) - 1.0) > 1e-12:
        raise ConfigError("scenario.g must be a unit 3-vector")
    w = cfg.sweep
    if not w.N or any((not isinstance(n, int)) or n < 1 for n in w.N):
        raise ConfigError("sweep.N must be a nonempty list of positive integers")
    if w.lambda_rule not in ("power", "list"):
        raise ConfigError("sweep.lambda_rule must be power or list")
    if w.lambda_rule == "list" and (not w.lambda_list or any(lam <= 0 for lam in w.lambda_list)):
        raise ConfigError("sweep.lambda_list must hold positive values")
    if w.lambda_rule == "power" and w.lambda_a <= 0:
        raise ConfigError("sweep.lambda_a must be positive")
    i = cfg.initial
    if i.sampling not in ("grid", "iid"):
        raise ConfigError("initial.sampling must be grid or iid")
    if i.velocity not in ("well-prepared", "zero", "bounded-random"):
        raise ConfigError("initial.velocity must be well-prepared, zero or bounded-random")
    if i.dim not in (2, 3):
        raise ConfigError("initial.dim must be 2 or 3")
    stokes = s.family in ("inertial-stokes", "inertialess-stokes", "macro-reference")
    if stokes and i.dim != 3:
        raise ConfigError("Stokes families are three-dimensional")
    if not stokes:
        kdim = 2 if cfg.kernel.form == "rotational-2d" else 3
        if kdim != i.dim:
            raise ConfigError(f"kernel.form {cfg.kernel.form} is {kdim}-dimensional but initial.dim = {i.dim}")
    if cfg.reference.M < 1 or cfg.reference.c_eps < 0:
        raise ConfigError("reference needs M >= 1 and c_eps >= 0")
    m = cfg.metrics
    if any(t < 0 or t > s.T + 1e-12 for t in m.times):
        raise ConfigError("metrics.times must lie in [0, T]")
    if m.mc_points < 1:
        raise ConfigError("metrics.mc_points must be positive")
    if not isinstance(cfg.seed, int) or cfg.seed < 0 or cfg.seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if not isinstance(cfg.out, str):
        raise ConfigError("out must be a string")


def manifest_lines(cfg: ExperimentConfig, extra: dict | None = None) -> list:
    """Header lines written at the top of every output file."""
    lines = [f"sediment-lab {__version__}", f"config-hash {cfg.content_hash()}", f"seed {cfg.seed}",
             "config " + json.dumps(cfg.resolved(), sort_keys=True, separators=(",", ":"))]
    for k, v in (extra or {}).items():
        lines.append(f"{k} {v}")
    return lines
