"""YAML harness configuration.

Every section is optional; omitted keys take the defaults below.

=================  ==========================================================
section            keys (default)
=================  ==========================================================
``seed``           unsigned 64-bit integer (0)
``rate``           sample rate in Hz (100)
``output``         output directory (``out``)
``subject``        height 1.75 m, mass 69.4 kg
``exo``            any ``ExoParams`` field; lengths scale with subject height
``environment``    slope 0 rad, load_mass 0 kg, gravity 9.81, load_offset 0.10
``limits``         hip [-2, 2], knee [0, 2.4], ankle [-0.8, 0.8] rad
``gait``           cadence law, stance fraction law, amplitude law, noise
``controller``     strategy blend, ankle_actuated false, fsm_threshold 50 N,
                   fsm_dwell 0.2 s, target blend
``calibration``    speed_kmh 3.5, duration 30 s, start 0 s, ridge 1e-8
``scenario``       condition T3.5 (T1, T3.5, SS) or trial 1..8
``protocol``       slope 10 deg, load_mass 10 kg, ramp 15 s, hold 2.5 s,
                   ramp trials 90 s, constant trials 30 s, cadence 100,
                   strategies [blend, fsm], ankle [on, off]
=================  ==========================================================

``environment`` applies to the preset conditions; protocol trials carry their
own slope and load.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .control import DEFAULT_RIDGE, ControllerConfig, Strategy
from .gait import GaitProfile
from .model import Environment, ExoParams, JointLimits, ValidationError
from .sim import (DEFAULT_SLOPE, METRONOME_CADENCE, PROTOCOL_LOAD, TARGETS, Scenario, Subject,
                  condition, protocol_suite)

U64_MAX = 2**64 - 1
CONDITIONS = ("T1", "T3.5", "SS")
_GAIT_KEYS = ("cadence_gain", "cadence_bounds", "stance_base", "stance_per_speed",
              "stance_bounds", "amplitude_half_speed", "noise_sigma")


class ConfigError(ValueError):
    """Bad configuration.  ``path`` is the dotted field path, ``line``/``column`` are 1-based."""

    def __init__(self, message: str, path: str | None = None,
                 line: int | None = None, column: int | None = None):
        self.path, self.line, self.column = path, line, column
        where = path or (f"line {line}, column {column}" if line is not None else "config")
        super().__init__(f"{where}: {message}")
        self.message = message

    def to_dict(self) -> dict:
        d = {"error": "config", "message": self.message}
        if self.path is not None:
            d["path"] = self.path
        if self.line is not None:
            d["line"], d["column"] = self.line, self.column
        return d


@dataclass(frozen=True)
class ControllerSection:
    strategy: str = "blend"
    ankle_actuated: bool = False
    fsm_threshold: float = 50.0
    fsm_dwell: float = 0.2
    target: str = "blend"

    def build(self) -> ControllerConfig:
        return ControllerConfig(strategy=Strategy(self.strategy), ankle_actuated=self.ankle_actuated,
                                fsm_threshold=self.fsm_threshold, fsm_dwell=self.fsm_dwell)


@dataclass(frozen=True)
class CalibrationSection:
    speed_kmh: float = 3.5
    duration: float = 30.0
    start: float = 0.0
    ridge: float = DEFAULT_RIDGE


@dataclass(frozen=True)
class ScenarioSection:
    condition: str = "T3.5"
    trial: int | None = None


@dataclass(frozen=True)
class ProtocolSection:
    slope_deg: float = math.degrees(DEFAULT_SLOPE)
    load_mass: float = PROTOCOL_LOAD
    ramp_duration: float = 15.0
    hold_duration: float = 2.5
    ramp_trial_duration: float = 90.0
    constant_trial_duration: float = 30.0
    cadence: float = METRONOME_CADENCE
    strategies: tuple[str, ...] = ("blend", "fsm")
    ankle: tuple[str, ...] = ("on", "off")


@dataclass(frozen=True)
class FullConfig:
    seed: int = 0
    rate: float = 100.0
    output: str = "out"
    subject: Subject = field(default_factory=Subject)
    exo: ExoParams = field(default_factory=ExoParams)
    environment: Environment = field(default_factory=Environment)
    limits: JointLimits = field(default_factory=JointLimits)
    gait: GaitProfile = field(default_factory=GaitProfile)
    controller: ControllerSection = field(default_factory=ControllerSection)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    protocol: ProtocolSection = field(default_factory=ProtocolSection)

    def controller_config(self, **overrides) -> ControllerConfig:
        return replace(self.controller, **overrides).build()

    def scenario_for(self, trial: int | None = None, name: str | None = None) -> Scenario:
        """The configured (or overridden) condition as a ``Scenario``."""
        trial = trial if trial is not None else (None if name else self.scenario.trial)
        if trial is not None:
            return self.protocol_scenarios()[trial - 1]
        sc = condition(name or self.scenario.condition, rate=self.rate)
        return replace(sc, slope=self.environment.slope, load_mass=self.environment.load_mass)

    def protocol_scenarios(self) -> list[Scenario]:
        p = self.protocol
        return protocol_suite(rate=self.rate, slope=math.radians(p.slope_deg),
                              load_mass=p.load_mass, ramp_duration=p.ramp_duration,
                              hold_duration=p.hold_duration,
                              ramp_trial_duration=p.ramp_trial_duration,
                              constant_trial_duration=p.constant_trial_duration,
                              cadence=p.cadence)

    def calibration_profile(self) -> GaitProfile:
        return replace(self.gait, speeds_kmh=(self.calibration.speed_kmh,),
                       subject_height=self.subject.height, subject_mass=self.subject.mass,
                       exo_mass=self.exo.total_mass, seed=self.seed)

    def to_dict(self) -> dict:
        d = {"seed": self.seed, "rate": self.rate, "output": self.output}
        for name in ("subject", "exo", "environment", "limits", "controller",
                     "calibration", "scenario", "protocol"):
            d[name] = _plain(asdict(getattr(self, name)))
        d["gait"] = _plain({k: getattr(self.gait, k) for k in _GAIT_KEYS})
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _section(raw: dict, name: str, cls, allowed=None, convert=None) -> dict:
    data = raw.get(name) or {}
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", path=name)
    allowed = allowed or {f.name for f in fields(cls)}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown key (expected one of {sorted(allowed)})", path=f"{name}.{key}")
    out = dict(data)
    for key, fn in (convert or {}).items():
        if out.get(key) is not None:
            try:
                out[key] = fn(out[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc), path=f"{name}.{key}") from None
    return out


def _build(name: str, cls, kwargs: dict):
    try:
        return cls(**kwargs)
    except ValidationError as exc:
        raise ConfigError(exc.message, path=f"{name}.{exc.field}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path=name) from None


def _pair(v):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ValueError("expected a [low, high] pair")
    return (float(v[0]), float(v[1]))


def load_config(text: str) -> FullConfig:
    """Parse and validate a YAML configuration document."""
    try:
        raw = yaml.safe_load(text) if text.strip() else {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        problem = getattr(exc, "problem", None) or str(exc)
        if mark is not None:
            raise ConfigError(problem, line=mark.line + 1, column=mark.column + 1) from None
        raise ConfigError(problem) from None
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping")
    known = {f.name for f in fields(FullConfig)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown section (expected one of {sorted(known)})", path=str(key))

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= U64_MAX:
        raise ConfigError("must be an unsigned 64-bit integer", path="seed")
    rate = raw.get("rate", 100.0)
    if isinstance(rate, bool) or not isinstance(rate, (int, float)) or not rate > 0:
        raise ConfigError("must be a positive number", path="rate")
    output = raw.get("output", "out")
    if not isinstance(output, str) or not output:
        raise ConfigError("must be a non-empty path", path="output")

    subject = _build("subject", Subject, _section(raw, "subject", Subject))
    exo_kw = _section(raw, "exo", ExoParams)
    exo = _build("exo", ExoParams.for_user, {"user_height": subject.height, **exo_kw})
    env = _build("environment", Environment, _section(raw, "environment", Environment))
    limits = _build("limits", JointLimits, _section(
        raw, "limits", JointLimits, convert={k: _pair for k in ("hip", "knee", "ankle")}))
    gait_kw = _section(raw, "gait", GaitProfile, allowed=set(_GAIT_KEYS),
                       convert={"cadence_bounds": _pair, "stance_bounds": _pair})
    gait = _build("gait", GaitProfile, gait_kw)

    ctl_kw = _section(raw, "controller", ControllerSection)
    ctl = ControllerSection(**ctl_kw)
    if ctl.strategy not in {s.value for s in Strategy}:
        raise ConfigError("must be 'blend' or 'fsm'", path="controller.strategy")
    if ctl.target not in TARGETS:
        raise ConfigError(f"must be one of {list(TARGETS)}", path="controller.target")
    if not isinstance(ctl.ankle_actuated, bool):
        raise ConfigError("must be true or false", path="controller.ankle_actuated")
    _build("controller", ControllerConfig, {k: v for k, v in asdict(ctl).items() if k != "target"})

    cal = CalibrationSection(**_section(raw, "calibration", CalibrationSection))
    for key in ("speed_kmh", "duration"):
        if not getattr(cal, key) > 0:
            raise ConfigError("must be > 0", path=f"calibration.{key}")
    if cal.ridge < 0:
        raise ConfigError("must be >= 0", path="calibration.ridge")

    sc = ScenarioSection(**_section(raw, "scenario", ScenarioSection))
    if sc.condition not in CONDITIONS:
        raise ConfigError(f"must be one of {list(CONDITIONS)}", path="scenario.condition")
    if sc.trial is not None and (isinstance(sc.trial, bool) or sc.trial not in range(1, 9)):
        raise ConfigError("must be an integer 1..8", path="scenario.trial")

    proto_kw = _section(raw, "protocol", ProtocolSection,
                        convert={"strategies": tuple, "ankle": tuple})
    proto = ProtocolSection(**proto_kw)
    if not proto.strategies or not set(proto.strategies) <= {"blend", "fsm"}:
        raise ConfigError("entries must be 'blend' or 'fsm'", path="protocol.strategies")
    if not proto.ankle or not set(proto.ankle) <= {"on", "off"}:
        raise ConfigError("entries must be 'on' or 'off'", path="protocol.ankle")
    if not abs(proto.slope_deg) < 45:
        raise ConfigError("|slope| must be < 45 deg", path="protocol.slope_deg")
    if proto.load_mass < 0:
        raise ConfigError("must be >= 0", path="protocol.load_mass")

    cfg = FullConfig(seed=seed, rate=float(rate), output=output, subject=subject, exo=exo,
                     environment=env, limits=limits, gait=gait, controller=ctl,
                     calibration=cal, scenario=sc, protocol=proto)
    try:
        cfg.protocol_scenarios()
        cfg.scenario_for()
    except ValidationError as exc:
        raise ConfigError(exc.message, path=f"protocol.{exc.field}") from None
    return cfg


def load_config_file(path) -> FullConfig:
    with open(path, encoding="utf-8") as fh:
        return load_config(fh.read())
