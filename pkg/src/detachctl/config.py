"""Scenario/config file grammar.

One ``key = value`` per line; ``#`` starts a comment; blank lines ignored.
Waveform knots repeat their key, one knot per line, times strictly increasing::

    target  = t, dz                   # DZ setpoint
    geom    = t, r_x, z_x, z_s        # equilibrium (meters)
    bright  = t, factor               # multiplicative brightness drift
    command = t, volts                # open-loop gas command (sysid / replay)
    front   = t, dz_true              # prescribe the true front fraction

Scalars: ``duration``, ``dt``, ``seed``, ``initial_dz``, ``frame.width``,
``frame.height``, plus dotted sections mirroring the dataclasses:
``plant.<PlantParams field>``, ``pid.{g_p,ratio_i,ratio_d,filter_tau,limits}``,
``dz.{variant,adjust_alpha,r_edge}``, ``train.{lambda,preprocessing}``,
``data.{count,test_fraction,r_x,dz_min,dz_max,brightness_min,brightness_max,
leg_inset_min,leg_inset_max,z_jitter,speckle_alpha}``,
``sysid.closed_loop_tau``.  Anything else is rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DEFAULT_GEOMETRY, DESK_HEIGHT, DESK_WIDTH, GeometryState
from .dzmetric import DzParams
from .errors import FormatError
from .plant import PlantParams

FRAME_DT = 1.0 / 30.0

_WAVE_ARITY = {"target": 1, "geom": 3, "bright": 1, "command": 1, "front": 1}


class Waveform:
    """Piecewise-linear knots ``(t, v1, v2, ...)``; held constant outside the knot range."""

    def __init__(self, knots):
        knots = np.atleast_2d(np.asarray(knots, dtype=np.float64))
        if knots.shape[0] == 0:
            raise FormatError("waveform needs at least one knot")
        if np.any(np.diff(knots[:, 0]) <= 0):
            raise FormatError("waveform knot times must be strictly increasing")
        self.knots = knots

    def __call__(self, t: float):
        k = self.knots
        vals = [float(np.interp(t, k[:, 0], k[:, j])) for j in range(1, k.shape[1])]
        return vals[0] if len(vals) == 1 else tuple(vals)

    def __len__(self):
        return self.knots.shape[0]


@dataclass
class Scenario:
    duration: float = 7.0
    dt: float = FRAME_DT
    seed: int = 0
    initial_dz: float = 0.0
    target: Waveform | None = None
    geometry: Waveform | None = None
    brightness: Waveform | None = None
    command: Waveform | None = None
    front: Waveform | None = None

    @property
    def ticks(self) -> int:
        return int(round(self.duration / self.dt))

    def geometry_at(self, t: float) -> GeometryState:
        if self.geometry is None:
            return DEFAULT_GEOMETRY
        return GeometryState(*self.geometry(t))

    def target_at(self, t: float) -> float:
        return 0.0 if self.target is None else self.target(t)

    def brightness_at(self, t: float) -> float:
        return 1.0 if self.brightness is None else self.brightness(t)


@dataclass
class PidSection:
    g_p: float | None = None
    ratio_i: float = 0.0
    ratio_d: float = 0.0
    filter_tau: float = 0.04
    limits: tuple = (0.0, 10.0)


@dataclass
class DataSection:
    count: int = 1000
    test_fraction: float = 0.2
    r_x: float = 1.35
    dz_min: float = 0.02           # one desk row above the strike point
    dz_max: float = 1.3
    brightness_min: float = 0.6
    brightness_max: float = 1.6
    leg_inset_min: float = 0.02
    leg_inset_max: float = 0.26
    z_jitter: float = 0.02
    speckle_alpha: float | None = None


@dataclass
class Config:
    scenario: Scenario = field(default_factory=Scenario)
    plant: PlantParams = field(default_factory=PlantParams)
    pid: PidSection = field(default_factory=PidSection)
    dz: DzParams = field(default_factory=DzParams)
    data: DataSection = field(default_factory=DataSection)
    train_lambda: float | None = None
    train_preprocessing: str = "norm"
    closed_loop_tau: float = 0.3
    width: int = DESK_WIDTH
    height: int = DESK_HEIGHT

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def _num(text: str, key: str, lineno: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"line {lineno}: {key} expects a number, got {text!r}") from None


def _field_types(cls):
    return {f.name: f.type for f in dataclasses.fields(cls)}


def _coerce(cls, name, raw, lineno):
    typ = str(_field_types(cls)[name])
    key = f"{cls.__name__}.{name}"
    if typ.startswith("int"):
        v = _num(raw, key, lineno)
        if v != int(v):
            raise FormatError(f"line {lineno}: {key} expects an integer")
        return int(v)
    if typ.startswith("str"):
        return raw
    if raw.lower() == "none" and "None" in typ:
        return None
    return _num(raw, key, lineno)


def parse_config(text: str) -> Config:
    cfg = Config()
    waves: dict[str, list] = {k: [] for k in _WAVE_ARITY}
    scen: dict = {}
    plant: dict = {}
    pid: dict = {}
    dzp: dict = {}
    data: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in _WAVE_ARITY:
            parts = [p for p in value.replace(",", " ").split()]
            if len(parts) != _WAVE_ARITY[key] + 1:
                raise FormatError(f"line {lineno}: {key} expects {_WAVE_ARITY[key] + 1} numbers")
            waves[key].append([_num(p, key, lineno) for p in parts])
        elif key in ("duration", "dt", "initial_dz"):
            scen[key] = _num(value, key, lineno)
        elif key == "seed":
            v = _num(value, key, lineno)
            if v != int(v) or v < 0:
                raise FormatError(f"line {lineno}: seed must be a non-negative integer")
            scen["seed"] = int(v)
        elif key == "frame.width":
            cfg.width = int(_num(value, key, lineno))
        elif key == "frame.height":
            cfg.height = int(_num(value, key, lineno))
        elif key.startswith("plant.") and key[6:] in _field_types(PlantParams):
            plant[key[6:]] = _coerce(PlantParams, key[6:], value, lineno)
        elif key == "pid.limits":
            parts = value.replace(",", " ").split()
            if len(parts) != 2:
                raise FormatError(f"line {lineno}: pid.limits expects lo, hi")
            pid["limits"] = tuple(_num(p, key, lineno) for p in parts)
        elif key.startswith("pid.") and key[4:] in _field_types(PidSection):
            pid[key[4:]] = _num(value, key, lineno)
        elif key.startswith("dz.") and key[3:] in _field_types(DzParams):
            dzp[key[3:]] = _coerce(DzParams, key[3:], value, lineno)
        elif key.startswith("data.") and key[5:] in _field_types(DataSection):
            data[key[5:]] = _coerce(DataSection, key[5:], value, lineno)
        elif key == "train.lambda":
            cfg.train_lambda = None if value.lower() == "auto" else _num(value, key, lineno)
        elif key == "train.preprocessing":
            cfg.train_preprocessing = value
        elif key == "sysid.closed_loop_tau":
            cfg.closed_loop_tau = _num(value, key, lineno)
        else:
            raise FormatError(f"line {lineno}: unknown key {key!r}")
    try:
        cfg.plant = PlantParams(**plant)
        cfg.dz = DzParams(**dzp)
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    cfg.pid = PidSection(**pid)
    cfg.data = DataSection(**data)
    s = Scenario(**scen)
    s.target = Waveform(waves["target"]) if waves["target"] else None
    s.geometry = Waveform(waves["geom"]) if waves["geom"] else None
    s.brightness = Waveform(waves["bright"]) if waves["bright"] else None
    s.command = Waveform(waves["command"]) if waves["command"] else None
    s.front = Waveform(waves["front"]) if waves["front"] else None
    if not s.dt > 0 or not s.duration > 0:
        raise FormatError("duration and dt must be positive")
    cfg.scenario = s
    return cfg


BUILTIN_PREFIX = "builtin:"


def builtin_names() -> list[str]:
    from importlib import resources

    return sorted(p.name[:-4] for p in resources.files("detachctl.configs").iterdir() if p.name.endswith(".cfg"))


def load_config(path) -> Config:
    """Read a config file; ``builtin:<name>`` selects one of the packaged scenarios."""
    text = str(path)
    if text.startswith(BUILTIN_PREFIX):
        from importlib import resources

        name = text[len(BUILTIN_PREFIX):]
        if name not in builtin_names():
            raise FileNotFoundError(f"no packaged config named {name!r}")
        return parse_config(resources.files("detachctl.configs").joinpath(name + ".cfg").read_text())
    return parse_config(Path(path).read_text())
