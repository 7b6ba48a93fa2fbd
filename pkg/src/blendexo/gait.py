"""Deterministic synthetic walking: kinematics, foot contact and insole loads.

Joint angles are truncated (3-harmonic) Fourier series of the gait phase with
amplitudes scaled by walking speed.  Rates and accelerations are the exact
analytic derivatives, including the terms from speed ramps.  The ankle series
is the knee series minus the hip series, which keeps the back-link upright in
both grounded models (the stance foot is taken as flat on the ground).

Phase is the integral of stride frequency, which follows the cadence law
``steps/min = 96 sqrt(v)`` clamped to ``[40, 140]``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .model import DEVICE_JOINTS, GRAVITY, JointState, ValidationError

KMH = 1.0 / 3.6
SENSORS = ("heel", "medial", "lateral", "toe")

# mean, then (cos k, sin k) for k = 1..3; radians at 1 m/s
HIP_SERIES = np.array([0.1554, 0.2630, -0.0431, -0.0354, -0.0420, -0.0007, 0.0193])
KNEE_SERIES = np.array([0.3017, -0.0418, -0.2596, -0.1530, 0.0962, -0.0101, 0.0328])
ANKLE_SERIES = KNEE_SERIES - HIP_SERIES
_SERIES = np.stack([HIP_SERIES, KNEE_SERIES, ANKLE_SERIES])

_EARLY_SPLIT = np.array([0.4, 0.2, 0.2, 0.2])
_LATE_SPLIT = np.array([0.2, 0.2, 0.2, 0.4])

CSV_COLUMNS = (
    ["t", "phase"]
    + [f"q_{j}" for j in DEVICE_JOINTS]
    + [f"qd_{j}" for j in DEVICE_JOINTS]
    + [f"qdd_{j}" for j in DEVICE_JOINTS]
    + [f"p_{s}_{n}" for s in ("l", "r") for n in SENSORS]
)


@dataclass(frozen=True)
class GaitProfile:
    """Speed schedule and gait-law parameters for one walking bout.

    The speed starts at ``speeds_kmh[0]``, is held for ``hold_duration``,
    then ramps linearly over ``ramp_duration`` to each following level (held
    again after every ramp).  After the last breakpoint the speed is constant.
    A non-``None`` ``cadence`` (steps/min) replaces the schedule with a fixed
    metronome rhythm at the speed the cadence law implies.
    """

    speeds_kmh: tuple[float, ...] = (3.5,)
    ramp_duration: float = 15.0
    hold_duration: float = 0.0
    cadence: float | None = None
    slope: float = 0.0
    subject_height: float = 1.75
    subject_mass: float = 69.4
    exo_mass: float = 15.0
    load_mass: float = 0.0
    cadence_gain: float = 96.0
    cadence_bounds: tuple[float, float] = (40.0, 140.0)
    stance_base: float = 0.62
    stance_per_speed: float = 0.04
    stance_bounds: tuple[float, float] = (0.55, 0.625)
    amplitude_half_speed: float = 0.15
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "speeds_kmh", tuple(float(s) for s in self.speeds_kmh))
        if not self.speeds_kmh:
            raise ValidationError("speeds_kmh", "at least one speed is required")
        if any(s < 0 for s in self.speeds_kmh):
            raise ValidationError("speeds_kmh", "speeds must be >= 0")
        if self.ramp_duration <= 0:
            raise ValidationError("ramp_duration", "must be > 0")
        if self.hold_duration < 0:
            raise ValidationError("hold_duration", "must be >= 0")
        lo, hi = self.cadence_bounds
        if not 0 < lo <= hi:
            raise ValidationError("cadence_bounds", "need 0 < low <= high")
        if self.cadence is not None and not lo <= self.cadence <= hi:
            raise ValidationError("cadence", f"must lie in [{lo}, {hi}]")
        s_lo, s_hi = self.stance_bounds
        if not 0.5 < s_lo <= s_hi <= 0.8:
            raise ValidationError("stance_bounds", "stance fraction must lie in (0.5, 0.8]")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma", "must be >= 0")
        if self.subject_mass <= 0 or self.subject_height <= 0:
            raise ValidationError("subject_mass", "anthropometrics must be > 0")

    @property
    def breakpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Times (s) and speeds (m/s) of the piecewise-linear schedule."""
        if self.cadence is not None:
            v = (self.cadence / self.cadence_gain) ** 2
            return np.array([0.0]), np.array([v])
        times, speeds = [0.0], [self.speeds_kmh[0] * KMH]
        t = 0.0
        for s in self.speeds_kmh[1:]:
            if self.hold_duration > 0:
                t += self.hold_duration
                times.append(t)
                speeds.append(speeds[-1])
            t += self.ramp_duration
            times.append(t)
            speeds.append(s * KMH)
        return np.array(times), np.array(speeds)

    @property
    def schedule_end(self) -> float:
        """Time at which the last speed level is reached."""
        return float(self.breakpoints[0][-1])


@dataclass(frozen=True)
class GaitSample:
    t: float
    phase: float
    speed: float
    state: JointState
    contact: np.ndarray
    pressure: np.ndarray
    support: float

    @property
    def pressure_sums(self) -> np.ndarray:
        return self.pressure.sum(axis=-1)


@dataclass(frozen=True)
class GaitTrace:
    """A batch of gait samples; arrays are indexed by sample first.

    ``support`` is the left foot's share of body support: 1 in left single
    support, 0 in right single support, a linear crossfade across double
    support and 0.5 while standing.
    """

    t: np.ndarray
    phase: np.ndarray
    cycle: np.ndarray
    speed: np.ndarray
    stance_fraction: np.ndarray
    state: JointState
    contact: np.ndarray
    pressure: np.ndarray
    support: np.ndarray

    def __len__(self):
        return len(self.t)

    def sample(self, k: int) -> GaitSample:
        return GaitSample(
            t=float(self.t[k]), phase=float(self.phase[k]), speed=float(self.speed[k]),
            state=JointState(self.state.q[k], self.state.qd[k], self.state.qdd[k]),
            contact=self.contact[k], pressure=self.pressure[k], support=float(self.support[k]),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        cols = np.column_stack([
            self.t, self.phase, self.state.q, self.state.qd, self.state.qdd,
            self.pressure.reshape(len(self.t), 8),
        ])
        for row in cols:
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()


def amplitude(profile: GaitProfile, v):
    """Speed scaling of joint excursions: 0 at rest, 1 at 1 m/s, saturating."""
    h = profile.amplitude_half_speed
    v = np.asarray(v, dtype=float)
    return v * (1 + h) / (v + h), (1 + h) * h / (v + h) ** 2, -2 * (1 + h) * h / (v + h) ** 3


def cadence(profile: GaitProfile, v):
    """Steps per minute at speed ``v`` (m/s)."""
    lo, hi = profile.cadence_bounds
    return np.clip(profile.cadence_gain * np.sqrt(np.maximum(v, 0.0)), lo, hi)


def stance_fraction(profile: GaitProfile, v):
    lo, hi = profile.stance_bounds
    return np.clip(profile.stance_base - profile.stance_per_speed * np.asarray(v), lo, hi)


def speed_at(profile: GaitProfile, t):
    """Treadmill speed (m/s) at time ``t``; constant after the last breakpoint."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("t", "time must be >= 0")
    times, speeds = profile.breakpoints
    v = np.interp(t, times, speeds)
    return float(v) if v.ndim == 0 else v


def _speed_slope(profile: GaitProfile, t):
    times, speeds = profile.breakpoints
    if len(times) == 1:
        return np.zeros_like(t)
    rates = np.diff(speeds) / np.diff(times)
    k = np.searchsorted(times, t, side="right") - 1
    inside = k < len(rates)
    return np.where(inside, rates[np.minimum(k, len(rates) - 1)], 0.0)


def _stride_rate_antiderivative(profile: GaitProfile, v):
    """Antiderivative over speed of the stride frequency (strides/s)."""
    lo, hi = profile.cadence_bounds
    g = profile.cadence_gain
    v_lo, v_hi = (lo / g) ** 2, (hi / g) ** 2
    v = np.asarray(v, dtype=float)
    f_lo = lo * v_lo
    f_mid = f_lo + g * 2.0 / 3.0 * (v_hi**1.5 - v_lo**1.5)
    out = np.where(
        v < v_lo, lo * v,
        np.where(v <= v_hi, f_lo + g * 2.0 / 3.0 * (np.clip(v, v_lo, v_hi) ** 1.5 - v_lo**1.5),
                 f_mid + hi * (v - v_hi)),
    )
    return out / 120.0


def _segment_phase(profile, v0, rate, dt):
    """Strides accumulated over ``dt`` seconds of a linear speed segment."""
    v1 = v0 + rate * dt
    flat = np.abs(rate) < 1e-12
    safe = np.where(flat, 1.0, rate)
    ramp = (_stride_rate_antiderivative(profile, v1) - _stride_rate_antiderivative(profile, v0)) / safe
    return np.where(flat, cadence(profile, v0) / 120.0 * dt, ramp)


def cycles_at(profile: GaitProfile, t):
    """Accumulated stride count (unwrapped phase) at time ``t``."""
    t = np.asarray(t, dtype=float)
    times, speeds = profile.breakpoints
    if len(times) == 1:
        return cadence(profile, speeds[0]) / 120.0 * t
    rates = np.append(np.diff(speeds) / np.diff(times), 0.0)
    starts = np.concatenate([[0.0], np.cumsum(
        _segment_phase(profile, speeds[:-1], rates[:-1], np.diff(times)))])
    k = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 1)
    return starts[k] + _segment_phase(profile, speeds[k], rates[k], t - times[k])


def _fourier(phase):
    """Series values and first/second phase derivatives, shape (3, n)."""
    val = np.repeat(_SERIES[:, :1], len(phase), axis=1)
    d1 = np.zeros_like(val)
    d2 = np.zeros_like(val)
    for k in (1, 2, 3):
        w = 2 * math.pi * k
        c, s = np.cos(w * phase), np.sin(w * phase)
        a, b = _SERIES[:, 2 * k - 1, None], _SERIES[:, 2 * k, None]
        val = val + a * c + b * s
        d1 = d1 + w * (b * c - a * s)
        d2 = d2 - w * w * (a * c + b * s)
    return val, d1, d2


def _stance_weight(u):
    """Double-hump vertical load profile over normalized stance time."""
    return np.sin(math.pi * u) + 0.4 * np.sin(3 * math.pi * u)


def gait_trace(profile: GaitProfile, t) -> GaitTrace:
    """Evaluate the generator at the times ``t`` (1-D array, s)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValidationError("t", "time must be >= 0")
    v = np.atleast_1d(speed_at(profile, t))
    vdot = _speed_slope(profile, t) if profile.cadence is None else np.zeros_like(t)
    cyc = cycles_at(profile, t)
    phase = np.mod(cyc, 1.0)

    f = cadence(profile, v) / 120.0
    lo, hi = profile.cadence_bounds
    raw = profile.cadence_gain * np.sqrt(v)
    unclamped = (raw > lo) & (raw < hi)
    dcad = profile.cadence_gain / (2 * np.sqrt(np.where(unclamped, v, 1.0)))
    fdot = np.where(unclamped, dcad, 0.0) / 120.0 * vdot

    amp, damp, ddamp = amplitude(profile, v)
    n = len(t)
    q = np.empty((n, 6))
    qd = np.empty((n, 6))
    qdd = np.empty((n, 6))
    offsets = np.array([2.0, 0.0, 1.0]) * profile.slope / 3.0
    for leg, shift in ((0, 0.0), (1, 0.5)):
        val, d1, d2 = _fourier(np.mod(cyc + shift, 1.0))
        cols = slice(3 * leg, 3 * leg + 3)
        q[:, cols] = (amp * val).T + offsets
        qd[:, cols] = (damp * vdot * val + amp * d1 * f).T
        qdd[:, cols] = (ddamp * vdot**2 * val + 2 * damp * vdot * d1 * f
                        + amp * d2 * f**2 + amp * d1 * fdot).T

    s = stance_fraction(profile, v)
    walking = v > 0
    weight = profile.subject_mass + profile.exo_mass + profile.load_mass
    total = weight * GRAVITY
    foot_phase = np.stack([phase, np.mod(phase + 0.5, 1.0)], axis=1)
    in_stance = foot_phase < s[:, None]
    u = np.where(in_stance, foot_phase / s[:, None], 0.0)
    w = np.where(in_stance, _stance_weight(u), 0.0)
    wsum = w.sum(axis=1, keepdims=True)
    load = np.where(walking[:, None], total * w / np.where(wsum > 0, wsum, 1.0), total / 2)
    u = np.where(walking[:, None], u, 0.5)
    split = _EARLY_SPLIT + u[..., None] * (_LATE_SPLIT - _EARLY_SPLIT)
    pressure = load[..., None] * split

    if profile.noise_sigma > 0:
        rng = np.random.default_rng(profile.seed)
        noisy = pressure + rng.normal(0.0, profile.noise_sigma, pressure.shape)
        pressure = np.where(load[..., None] > 0, np.maximum(noisy, 0.0), 0.0)
    contact = pressure.sum(axis=-1) > 0

    ds = s - 0.5
    support = np.where(phase < ds, phase / ds,
                       np.where(phase < 0.5, 1.0,
                                np.where(phase < s, 1.0 - (phase - 0.5) / ds, 0.0)))
    support = np.where(walking, support, 0.5)

    return GaitTrace(t=t, phase=phase, cycle=np.floor(cyc), speed=v, stance_fraction=s,
                     state=JointState(q, qd, qdd), contact=contact, pressure=pressure,
                     support=support)


def gait_sample(profile: GaitProfile, t: float) -> GaitSample:
    """Single-time evaluation of :func:`gait_trace` (sensor noise not applied)."""
    if profile.noise_sigma > 0:
        profile = _without_noise(profile)
    return gait_trace(profile, [t]).sample(0)


def _without_noise(profile):
    return replace(profile, noise_sigma=0.0)


def stance_label(sample) -> int | np.ndarray:
    """Raw stance class from insole loads: +1 if the left foot carries more, else -1.

    Ties (including quiet standing) map to -1.  Works on a ``GaitSample`` or
    a ``GaitTrace``.
    """
    sums = np.asarray(sample.pressure).sum(axis=-1)
    label = np.where(sums[..., 0] > sums[..., 1], 1, -1)
    return int(label) if label.ndim == 0 else label


@dataclass(frozen=True)
class CalibrationSet:
    Q: np.ndarray
    c: np.ndarray
    t: np.ndarray
    degenerate: bool
    trace: GaitTrace = field(repr=False)


def make_calibration_dataset(profile: GaitProfile, duration: float, rate: float,
                             start: float = 0.0) -> CalibrationSet:
    """Joint-angle rows and stance labels sampled at ``rate`` Hz."""
    if duration <= 0 or rate <= 0:
        raise ValidationError("duration", "duration and rate must be > 0")
    n = int(math.floor(duration * rate + 1e-9))
    if n < 6:
        raise ValidationError("duration", f"{n} samples is fewer than the 6 joints")
    t = start + np.arange(n) / rate
    trace = gait_trace(profile, t)
    Q = trace.state.q
    degenerate = bool(np.all(Q == Q[0]))
    return CalibrationSet(Q=Q, c=stance_label(trace), t=t, degenerate=degenerate, trace=trace)


def read_gait_csv(text: str) -> dict[str, np.ndarray]:
    """Parse a gait CSV export back into named columns."""
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    if header != CSV_COLUMNS:
        raise ValidationError("header", "unexpected gait CSV columns")
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}
