"""Scenario configuration: a nested YAML document with a fixed schema.

Every section maps onto a dataclass below; unknown keys, wrong types and
out-of-range values raise :class:`ConfigError`. A minimal file::

    scenario: control_linear
    model: {c: 1.0}
    numerics: {K: 16}
    control: {T: 7.54}

Sections and defaults
---------------------
scenario
    one of simulate, taylor, control_linear, control_nonlinear, stabilize,
    moving_frame_check, global_steer, ucp_probe.
model
    c (0.0), drift (1.0), nonlinearity (bbm_quadratic | generalized_f |
    nonlocal_convolution | none), f_power (2) and f_coeff (0.5) for
    f(u) = f_coeff u^f_power, lam (0.0), damping (null | feedback |
    localized), gain (1.0), profile {kind: none | bump | constant, center,
    width, height}.
initial, target
    kind: zero | cos | modes | random | file. ``cos`` uses amplitude and
    mode; ``modes`` maps k to [re, im]; ``random`` draws a field with
    spectral decay ``decay`` and rescales it to H^1 norm ``norm``; ``file``
    reads a k,re,im CSV from ``path``.
numerics
    K (32), N (grid points for pointwise output, default 4K), dt (1e-3),
    samples (100 output samples), t_end (10.0).
control
    T (default 1.2 * 2 pi / |c|), s (1.0), tolerance (1e-12), max_iter (30),
    n_time (2048), delta_local (1.0), chunk (0.5).
stabilize
    amplitudes ([1, 2.5, 5]), batch (50), R0 (5.0), t_min (1.0),
    decay_t_min (500), decay_t_end (1500), decay_samples (1001).
taylor
    n_max (20).
probe
    arc ([0.0, 1.0]) in radians.
io
    output_dir ("out"), emit_plots (true), seed (0).
"""

from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

SCENARIOS = (
    "simulate", "taylor", "control_linear", "control_nonlinear",
    "stabilize", "moving_frame_check", "global_steer", "ucp_probe",
)
CONTROL_SCENARIOS = ("control_linear", "control_nonlinear", "moving_frame_check", "global_steer", "stabilize")


class ConfigError(ValueError):
    pass


@dataclass
class ProfileSpec:
    kind: str = "none"
    center: float = math.pi
    width: float = 10.0
    height: float = 1.0


@dataclass
class ModelSpec:
    c: float = 0.0
    drift: float = 1.0
    nonlinearity: str = "bbm_quadratic"
    f_power: int = 2
    f_coeff: float = 0.5
    lam: float = 0.0
    damping: typing.Optional[str] = None
    gain: float = 1.0
    profile: ProfileSpec = field(default_factory=ProfileSpec)


@dataclass
class StateSpec:
    kind: str = "zero"
    amplitude: float = 1.0
    mode: int = 1
    norm: float = 1.0
    decay: float = 1.5
    modes: dict = field(default_factory=dict)
    path: typing.Optional[str] = None


@dataclass
class NumericsSpec:
    K: int = 32
    N: typing.Optional[int] = None
    dt: float = 1e-3
    samples: int = 100
    t_end: float = 10.0


@dataclass
class ControlSpec:
    T: typing.Optional[float] = None
    s: float = 1.0
    tolerance: float = 1e-12
    max_iter: int = 30
    n_time: int = 2048
    delta_local: float = 1.0
    chunk: float = 0.5


@dataclass
class StabilizeSpec:
    amplitudes: list = field(default_factory=lambda: [1.0, 2.5, 5.0])
    batch: int = 50
    R0: float = 5.0
    t_min: float = 1.0
    decay_t_min: float = 500.0
    decay_t_end: float = 1500.0
    decay_samples: int = 1001


@dataclass
class TaylorSpec:
    n_max: int = 20


@dataclass
class ProbeSpec:
    arc: list = field(default_factory=lambda: [0.0, 1.0])


@dataclass
class IOSpec:
    output_dir: str = "out"
    emit_plots: bool = True
    seed: int = 0


@dataclass
class ScenarioConfig:
    scenario: str
    model: ModelSpec = field(default_factory=ModelSpec)
    initial: StateSpec = field(default_factory=StateSpec)
    target: StateSpec = field(default_factory=StateSpec)
    numerics: NumericsSpec = field(default_factory=NumericsSpec)
    control: ControlSpec = field(default_factory=ControlSpec)
    stabilize: StabilizeSpec = field(default_factory=StabilizeSpec)
    taylor: TaylorSpec = field(default_factory=TaylorSpec)
    probe: ProbeSpec = field(default_factory=ProbeSpec)
    io: IOSpec = field(default_factory=IOSpec)

    @property
    def horizon(self) -> float:
        """Control horizon T, defaulting to 1.2 times the minimal time 2 pi / |c|."""
        if self.control.T is not None:
            return float(self.control.T)
        if self.model.c == 0:
            return float(self.numerics.t_end)
        return 1.2 * 2 * math.pi / abs(self.model.c)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value, tp, where: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], where)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping, got {type(value).__name__}")
        return _build(tp, value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if tp is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        return value
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping")
        return value
    raise ConfigError(f"{where}: unsupported type {tp}")  # pragma: no cover


def _build(cls, data: dict, where: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'top level'}: {', '.join(map(str, unknown))}")
    kwargs = {k: _coerce(v, hints[k], f"{where}.{k}" if where else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'top level'}: {exc}") from None


def _check_state(st: StateSpec, name: str, K: int) -> None:
    kinds = ("zero", "cos", "modes", "random", "file")
    if st.kind not in kinds:
        raise ConfigError(f"{name}.kind must be one of {kinds}")
    if st.kind == "cos" and not 0 <= st.mode <= K:
        raise ConfigError(f"{name}.mode outside truncation")
    if st.kind == "random" and st.norm < 0:
        raise ConfigError(f"{name}.norm must be nonnegative")
    if st.kind == "file" and not st.path:
        raise ConfigError(f"{name}.path required for kind 'file'")
    if st.kind == "modes":
        for k, v in st.modes.items():
            if not isinstance(k, int) or abs(k) > K:
                raise ConfigError(f"{name}.modes: bad mode {k!r}")
            if not (isinstance(v, list) and len(v) == 2):
                raise ConfigError(f"{name}.modes[{k}] must be [re, im]")


def validate(cfg: ScenarioConfig) -> ScenarioConfig:
    if cfg.scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}")
    m, n, ctl = cfg.model, cfg.numerics, cfg.control
    if m.nonlinearity not in ("bbm_quadratic", "generalized_f", "nonlocal_convolution", "none"):
        raise ConfigError(f"unknown nonlinearity {m.nonlinearity!r}")
    if m.damping not in (None, "feedback", "localized"):
        raise ConfigError(f"unknown damping {m.damping!r}")
    if m.profile.kind not in ("none", "bump", "constant"):
        raise ConfigError(f"unknown profile kind {m.profile.kind!r}")
    if m.damping is not None and m.profile.kind == "none":
        raise ConfigError("damping needs model.profile")
    if n.K < 1:
        raise ConfigError("numerics.K must be >= 1")
    if n.N is not None and n.N < 2 * n.K + 1:
        raise ConfigError("numerics.N must be >= 2K+1")
    if n.dt <= 0 or n.t_end <= 0 or n.samples < 1:
        raise ConfigError("numerics.dt, t_end and samples must be positive")
    for name in ("initial", "target"):
        _check_state(getattr(cfg, name), name, n.K)
    if cfg.scenario in CONTROL_SCENARIOS:
        if m.c == 0:
            raise ConfigError(f"{cfg.scenario} needs c != 0")
        if cfg.horizon <= 2 * math.pi / abs(m.c):
            raise ConfigError(f"control.T={cfg.horizon:g} must exceed 2*pi/|c|={2 * math.pi / abs(m.c):g}")
        if cfg.scenario != "stabilize" and m.profile.kind == "none":
            raise ConfigError(f"{cfg.scenario} needs model.profile")
    if cfg.scenario == "stabilize" and m.profile.kind == "none":
        raise ConfigError("stabilize needs model.profile")
    if ctl.n_time < 2 or ctl.n_time % 2:
        raise ConfigError("control.n_time must be even")
    if ctl.max_iter < 1 or ctl.tolerance <= 0 or ctl.delta_local <= 0 or ctl.chunk <= 0:
        raise ConfigError("control.max_iter, tolerance, delta_local and chunk must be positive")
    st = cfg.stabilize
    if st.batch < 0 or st.R0 <= 0 or st.decay_samples < 3 or not st.decay_t_end > st.decay_t_min:
        raise ConfigError("stabilize: invalid batch, R0 or decay window")
    if not all(isinstance(v, (int, float)) and v > 0 for v in st.amplitudes):
        raise ConfigError("stabilize.amplitudes must be positive numbers")
    if cfg.taylor.n_max < 1:
        raise ConfigError("taylor.n_max must be >= 1")
    arc = cfg.probe.arc
    if len(arc) != 2 or not all(isinstance(v, (int, float)) for v in arc):
        raise ConfigError("probe.arc must be [start, end]")
    if not arc[1] > arc[0]:
        raise ConfigError("probe.arc must have positive length")
    return cfg


def parse_config(data) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at top level")
    if "scenario" not in data:
        raise ConfigError("missing key 'scenario'")
    return validate(_build(ScenarioConfig, data))


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data)
