"""Trial simulation: prescribed gait in, logged torques and cuff forces out.

The plant is kinematic.  Gait angles are prescribed, so controller torques
never feed back into the motion.  At every tick both grounded models are
evaluated, the controller produces the applied torque, and whatever the
required compensation still lacks is the residual the wearer must supply
through the thigh and shank cuffs.

The required torque is a blend of the two model torques.  By default
(``target="blend"``) the plant shares the controller's calibrated Blend model,
so a Blend run reproduces it exactly and the residual is what the masked
joints would have been commanded.  ``target="support"`` blends with the true
support share from the gait generator instead, scoring every strategy against
a target that does not depend on the calibration.
"""
from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import __version__
from .control import (
    AppliedTorques,
    BlendGains,
    BlendWeights,
    ControllerConfig,
    FsmState,
    Strategy,
    assist_torques,
    blend_gains,
    blend_torque,
    fsm_step,
)
from .gait import KMH, GaitProfile, GaitSample, gait_trace
from .model import (
    DEVICE_JOINTS,
    Environment,
    ExoParams,
    GroundedChain,
    JointLimits,
    Side,
    ValidationError,
    build_grounded_chain,
    compensation_torques,
    force_jacobian,
)

SCHEMA_VERSION = 1
CUFFS = ("l_thigh", "l_shank", "r_thigh", "r_shank")
DEFAULT_SLOPE = math.radians(10.0)
PROTOCOL_LOAD = 10.0
METRONOME_CADENCE = 100.0
FLAT_GROUND_DISTANCE = 7.0
SELF_SELECTED_KMH = 2.5


class ConfigurationError(ValueError):
    pass


class SimulationError(RuntimeError):
    def __init__(self, tick: int, message: str):
        self.tick = tick
        super().__init__(f"tick {tick}: {message}")


class Ground(str, enum.Enum):
    TREADMILL = "TM"
    FLAT = "FG"


@dataclass(frozen=True)
class Subject:
    height: float = 1.75
    mass: float = 69.4

    def __post_init__(self):
        if self.height <= 0:
            raise ValidationError("height", "must be > 0")
        if self.mass <= 0:
            raise ValidationError("mass", "must be > 0")


@dataclass(frozen=True)
class Scenario:
    """One walking trial.

    Treadmill trials follow ``speeds_kmh`` with ``ramp_duration`` transitions;
    flat-ground trials keep a metronome ``cadence`` (steps/min).
    """

    name: str
    ground: Ground = Ground.TREADMILL
    slope: float = 0.0
    load_mass: float = 0.0
    speeds_kmh: tuple[float, ...] | None = (3.5,)
    cadence: float | None = None
    duration: float = 30.0
    rate: float = 100.0
    ramp_duration: float = 15.0
    hold_duration: float = 0.0
    trial: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "ground", Ground(self.ground))
        if self.speeds_kmh is not None:
            object.__setattr__(self, "speeds_kmh", tuple(float(s) for s in self.speeds_kmh))
        if self.duration <= 0:
            raise ValidationError("duration", "must be > 0")
        if self.rate <= 0:
            raise ValidationError("rate", "must be > 0")
        if abs(self.duration * self.rate - round(self.duration * self.rate)) > 1e-6:
            raise ValidationError("duration", "duration * rate must be a whole number of samples")
        if self.ground is Ground.FLAT and self.cadence is None:
            raise ValidationError("cadence", "flat-ground trials need a metronome cadence")
        if self.ground is Ground.TREADMILL and not self.speeds_kmh:
            raise ValidationError("speeds_kmh", "treadmill trials need a speed sequence")
        if abs(self.slope) >= math.pi / 4:
            raise ValidationError("slope", "|slope| must be < pi/4")
        if self.load_mass < 0:
            raise ValidationError("load_mass", "must be >= 0")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.rate))

    @property
    def tag(self) -> str:
        """Filesystem-safe condition tag."""
        base = f"trial{self.trial}" if self.trial is not None else self.name
        return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in base)

    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.rate

    def gait_profile(self, subject: Subject, exo_mass: float,
                     template: GaitProfile | None = None, seed: int = 0) -> GaitProfile:
        base = template or GaitProfile()
        speeds = self.speeds_kmh if self.ground is Ground.TREADMILL else base.speeds_kmh
        return replace(
            base, speeds_kmh=speeds, ramp_duration=self.ramp_duration,
            hold_duration=self.hold_duration,
            cadence=self.cadence if self.ground is Ground.FLAT else None,
            slope=self.slope, subject_height=subject.height, subject_mass=subject.mass,
            exo_mass=exo_mass, load_mass=self.load_mass, seed=seed,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ground"] = self.ground.value
        d["speeds_kmh"] = list(self.speeds_kmh) if self.speeds_kmh is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        if d.get("speeds_kmh") is not None:
            d["speeds_kmh"] = tuple(d["speeds_kmh"])
        return cls(**d)


def walking_time(distance: float, cadence: float, rate: float, gain: float = 96.0) -> float:
    """Duration on the sample grid to cover ``distance`` at a metronome cadence."""
    speed = (cadence / gain) ** 2
    return round(distance / speed * rate) / rate


def condition(name: str, rate: float = 100.0) -> Scenario:
    """Preset walking conditions: ``T1``, ``T3.5`` (treadmill, 30 s) and ``SS``."""
    key = name.upper()
    if key == "T1":
        return Scenario("T1", speeds_kmh=(1.0,), duration=30.0, rate=rate)
    if key == "T3.5":
        return Scenario("T3.5", speeds_kmh=(3.5,), duration=30.0, rate=rate)
    if key == "SS":
        cad = 96.0 * math.sqrt(SELF_SELECTED_KMH * KMH)
        return Scenario("SS", ground=Ground.FLAT, speeds_kmh=None, cadence=cad,
                        duration=walking_time(FLAT_GROUND_DISTANCE, cad, rate), rate=rate)
    raise ValidationError("condition", f"unknown condition {name!r} (T1, T3.5, SS)")


def protocol_suite(rate: float = 100.0, slope: float = DEFAULT_SLOPE,
                   load_mass: float = PROTOCOL_LOAD, ramp_duration: float = 15.0,
                   hold_duration: float = 2.5, ramp_trial_duration: float = 90.0,
                   constant_trial_duration: float = 30.0,
                   cadence: float = METRONOME_CADENCE) -> list[Scenario]:
    """The eight protocol trials, in table order."""
    ramp = (0.0, 2.0, 4.0, 6.0, 2.0, 6.0)
    fg_duration = walking_time(FLAT_GROUND_DISTANCE, cadence, rate)
    common = dict(rate=rate, ramp_duration=ramp_duration)
    rows = [
        dict(slope=0.0, load_mass=0.0, speeds_kmh=ramp, duration=ramp_trial_duration),
        dict(slope=slope, load_mass=0.0, speeds_kmh=(0.0, 4.0), duration=ramp_trial_duration),
        dict(slope=0.0, load_mass=load_mass, speeds_kmh=ramp, duration=ramp_trial_duration),
        dict(slope=slope, load_mass=0.0, speeds_kmh=(0.0, 4.0), duration=ramp_trial_duration),
        dict(slope=0.0, load_mass=0.0, speeds_kmh=(4.0,), duration=constant_trial_duration),
        dict(slope=0.0, load_mass=load_mass, speeds_kmh=(4.0,), duration=constant_trial_duration),
        dict(ground=Ground.FLAT, speeds_kmh=None, cadence=cadence, duration=fg_duration),
        dict(ground=Ground.FLAT, speeds_kmh=None, cadence=cadence, load_mass=load_mass,
             duration=fg_duration),
    ]
    suite = []
    for i, row in enumerate(rows, start=1):
        hold = hold_duration if row.get("speeds_kmh") and len(row["speeds_kmh"]) > 1 else 0.0
        suite.append(Scenario(name=f"trial{i}", trial=i, hold_duration=hold, **common, **row))
    return suite


@dataclass(frozen=True)
class HarnessModel:
    """Cuff attachment distances (m): thigh cuff below the hip, shank cuff below the knee.

    Cuff forces are perpendicular to their segment, positive toward the
    front of the leg.
    """

    thigh_cuff: float = 0.20
    shank_cuff: float = 0.12

    @classmethod
    def from_exo(cls, exo: ExoParams) -> "HarnessModel":
        return cls(thigh_cuff=exo.thigh_cuff, shank_cuff=exo.shank_cuff)

    def check(self, exo: ExoParams) -> None:
        if not 0 < self.thigh_cuff < exo.thigh_length:
            raise ValidationError("thigh_cuff", "must lie inside the thigh")
        if not 0 < self.shank_cuff < exo.shank_length:
            raise ValidationError("shank_cuff", "must lie inside the shank")


def cuff_jacobian(chain: GroundedChain, q, harness: HarnessModel) -> np.ndarray:
    """Map from the four cuff forces to device-ordered joint torques.

    Returns shape ``(..., 4, 6)``; cuffs ordered as ``CUFFS``.
    """
    ls, lt = chain.length[0], chain.length[1]
    # chain link, distance from that link's joint, +1 if link points up the leg
    stance = [(1, lt - harness.thigh_cuff, 1.0), (0, ls - harness.shank_cuff, 1.0)]
    swing = [(3, harness.thigh_cuff, -1.0), (4, harness.shank_cuff, -1.0)]
    rows = stance + swing if chain.stance is Side.LEFT else swing + stance
    return np.stack([sgn * force_jacobian(chain, q, link, along) for link, along, sgn in rows],
                    axis=-2)


class InteractionForces(NamedTuple):
    force: np.ndarray
    regularized: np.ndarray


def interaction_forces(residual, chain: GroundedChain, q, harness: HarnessModel,
                       damping: float = 1e-9, max_cond: float = 1e12) -> InteractionForces:
    """Minimum-norm cuff forces whose joint torques best reproduce ``residual``.

    Solves ``J^T f = residual`` in the least-squares sense through
    ``(J J^T) f = J residual``.  Samples whose ``J J^T`` is ill-conditioned
    get ``damping`` added to the diagonal and are flagged.
    """
    residual = np.asarray(residual, dtype=float)
    if not np.all(np.isfinite(residual)):
        raise ValidationError("residual", "entries must be finite")
    J = cuff_jacobian(chain, q, harness)
    JJt = J @ np.swapaxes(J, -1, -2)
    rhs = (J @ residual[..., None])[..., 0]
    bad = np.linalg.cond(JJt) > max_cond
    JJt = JJt + np.where(bad[..., None, None], damping * np.eye(4), 0.0)
    force = np.linalg.solve(JJt, rhs[..., None])[..., 0]
    return InteractionForces(force, bad)


@dataclass
class RunRecord:
    """Per-sample log of one trial plus the run metadata."""

    t: np.ndarray
    phase: np.ndarray
    cycle: np.ndarray
    speed: np.ndarray
    contact: np.ndarray
    load: np.ndarray
    support: np.ndarray
    gain_left: np.ndarray
    q: np.ndarray
    tau_left: np.ndarray
    tau_right: np.ndarray
    tau_required: np.ndarray
    command: np.ndarray
    applied: np.ndarray
    residual: np.ndarray
    forces: np.ndarray
    regularized: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def rate(self) -> float:
        return float(self.meta["scenario"]["rate"])

    @property
    def gain_right(self) -> np.ndarray:
        return 1.0 - self.gain_left

    def stance_ankle_residual(self) -> np.ndarray:
        """Residual at the ankle of whichever foot carries most support."""
        return np.where(self.support >= 0.5, self.residual[:, 2], self.residual[:, 5])

    def stance_ankle_compensation(self) -> np.ndarray:
        """Stance-ankle torque of the grounded model of the supporting foot."""
        return np.where(self.support >= 0.5, self.tau_left[:, 2], self.tau_right[:, 5])

    def single_support(self) -> np.ndarray:
        return (self.support == 0.0) | (self.support == 1.0)

    # serialization -------------------------------------------------------

    def _columns(self):
        yield "t", self.t, float
        yield "phase", self.phase, float
        yield "cycle", self.cycle, int
        yield "speed", self.speed, float
        yield "contact_l", self.contact[:, 0], int
        yield "contact_r", self.contact[:, 1], int
        yield "load_l", self.load[:, 0], float
        yield "load_r", self.load[:, 1], float
        yield "support", self.support, float
        yield "gamma_l", self.gain_left, float
        yield "gamma_r", self.gain_right, float
        for prefix, arr in (("q", self.q), ("tau_l", self.tau_left), ("tau_r", self.tau_right),
                            ("tau_req", self.tau_required), ("tau_cmd", self.command),
                            ("tau_app", self.applied), ("res", self.residual)):
            for j, name in enumerate(DEVICE_JOINTS):
                yield f"{prefix}_{name}", arr[:, j], float
        for k, name in enumerate(CUFFS):
            yield f"f_{name}", self.forces[:, k], float
        yield "regularized", self.regularized, int

    def to_csv(self) -> str:
        names, cols = [], []
        for name, arr, kind in self._columns():
            names.append(name)
            values = np.asarray(arr).tolist()
            cols.append([str(int(v)) for v in values] if kind is int else [repr(float(v)) for v in values])
        lines = [",".join(names)]
        lines.extend(",".join(row) for row in zip(*cols))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = dict(self.meta)
        doc["schema_version"] = SCHEMA_VERSION
        doc["n_samples"] = len(self)
        doc["columns"] = [name for name, _, _ in self._columns()]
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_csv(cls, text: str, sidecar: str | dict) -> "RunRecord":
        meta = json.loads(sidecar) if isinstance(sidecar, str) else dict(sidecar)
        if meta.get("schema_version") != SCHEMA_VERSION:
            raise ValidationError("schema_version", f"unsupported {meta.get('schema_version')!r}")
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header != meta.get("columns"):
            raise ValidationError("columns", "CSV header does not match the sidecar")
        data = np.array(list(reader), dtype=float)
        col = {name: data[:, i] for i, name in enumerate(header)}

        def block(prefix, names):
            return np.column_stack([col[f"{prefix}_{n}"] for n in names])

        for key in ("columns", "n_samples", "schema_version"):
            meta.pop(key, None)
        return cls(
            t=col["t"], phase=col["phase"], cycle=col["cycle"].astype(int), speed=col["speed"],
            contact=np.column_stack([col["contact_l"], col["contact_r"]]).astype(bool),
            load=np.column_stack([col["load_l"], col["load_r"]]),
            support=col["support"], gain_left=col["gamma_l"], q=block("q", DEVICE_JOINTS),
            tau_left=block("tau_l", DEVICE_JOINTS), tau_right=block("tau_r", DEVICE_JOINTS),
            tau_required=block("tau_req", DEVICE_JOINTS), command=block("tau_cmd", DEVICE_JOINTS),
            applied=block("tau_app", DEVICE_JOINTS), residual=block("res", DEVICE_JOINTS),
            forces=block("f", CUFFS), regularized=col["regularized"].astype(bool), meta=meta,
        )


def weights_digest(weights: BlendWeights | None) -> str | None:
    if weights is None:
        return None
    return hashlib.sha256(weights.to_json().encode()).hexdigest()[:16]


def _fsm_selection(trace, cfg: ControllerConfig) -> list[Side]:
    sums = trace.pressure.sum(axis=-1)
    state = FsmState(side=Side.LEFT if sums[0, 0] > sums[0, 1] else Side.RIGHT)
    sides = []
    for k in range(len(trace)):
        state = fsm_step(state, _Reading(trace.t[k], trace.pressure[k]), cfg)
        sides.append(state.side)
    return sides


class _Reading(NamedTuple):
    t: float
    pressure: np.ndarray


TARGETS = ("blend", "support")


def run_trial(scenario: Scenario, cfg: ControllerConfig, exo: ExoParams | None = None,
              subject: Subject | None = None, weights: BlendWeights | None = None,
              seed: int = 0, harness: HarnessModel | None = None,
              gait: GaitProfile | None = None, limits: JointLimits | None = None,
              target: str = "blend") -> RunRecord:
    """Simulate one trial and log every tick.

    ``target`` selects the required-torque model (see the module docstring).
    Calibrated ``weights`` are needed by the Blend controller and by the
    ``"blend"`` target.  Cuff forces are resolved on the chain rooted at the
    foot that actually carries most of the support.
    """
    if target not in TARGETS:
        raise ConfigurationError(f"unknown target {target!r}; expected one of {TARGETS}")
    exo = exo or ExoParams.for_user((subject or Subject()).height)
    subject = subject or Subject()
    harness = harness or HarnessModel.from_exo(exo)
    harness.check(exo)
    if cfg.strategy is Strategy.BLEND or target == "blend":
        if weights is None:
            raise ConfigurationError("missing calibrated Blend weights (run calibration first)")
        if tuple(weights.joints) != DEVICE_JOINTS:
            raise ConfigurationError(
                f"weights joint order {weights.joints} does not match {DEVICE_JOINTS}")

    profile = scenario.gait_profile(subject, exo.total_mass, template=gait, seed=seed)
    trace = gait_trace(profile, scenario.times())
    trace.state.check_limits(limits)
    env = Environment(slope=scenario.slope, load_mass=scenario.load_mass)
    left = build_grounded_chain(exo, Side.LEFT, env)
    right = build_grounded_chain(exo, Side.RIGHT, env)
    tau_left = compensation_torques(left, trace.state)
    tau_right = compensation_torques(right, trace.state)
    finite = np.all(np.isfinite(tau_left) & np.isfinite(tau_right), axis=1)
    if not np.all(finite):
        raise SimulationError(int(np.argmin(finite)), "non-finite model torque")

    support = trace.support
    model_gains = blend_gains(weights, trace.state.q, clamp=cfg.clamp) if weights else None
    if cfg.strategy is Strategy.BLEND:
        out: AppliedTorques = assist_torques(cfg, tau_left, tau_right, gains=model_gains)
        gain_left = np.asarray(model_gains.left, dtype=float)
    else:
        sides = _fsm_selection(trace, cfg)
        out = assist_torques(cfg, tau_left, tau_right, fsm_state=sides)
        gain_left = np.array([1.0 if s is Side.LEFT else 0.0 for s in sides])

    target_gains = model_gains if target == "blend" else BlendGains(support, 1.0 - support)
    required = blend_torque(tau_left, tau_right, target_gains)
    residual = required - out.tau
    on_left = support >= 0.5
    f_left = interaction_forces(residual, left, trace.state.q, harness)
    f_right = interaction_forces(residual, right, trace.state.q, harness)
    forces = np.where(on_left[:, None], f_left.force, f_right.force)
    regularized = np.where(on_left, f_left.regularized, f_right.regularized)

    meta = {
        "package_version": __version__,
        "scenario": scenario.to_dict(),
        "controller": {
            "strategy": cfg.strategy.value, "ankle_actuated": cfg.ankle_actuated,
            "fsm_threshold": cfg.fsm_threshold, "fsm_dwell": cfg.fsm_dwell, "clamp": cfg.clamp,
        },
        "target": target,
        "seed": int(seed),
        "weights": weights_digest(weights),
        "exo": asdict(exo),
        "subject": asdict(subject),
        "harness": asdict(harness),
    }
    return RunRecord(
        t=trace.t, phase=trace.phase, cycle=trace.cycle.astype(int), speed=trace.speed,
        contact=trace.contact, load=trace.pressure.sum(axis=-1), support=support,
        gain_left=gain_left, q=trace.state.q, tau_left=tau_left, tau_right=tau_right,
        tau_required=required, command=out.command, applied=out.tau, residual=residual,
        forces=forces, regularized=regularized, meta=meta,
    )
