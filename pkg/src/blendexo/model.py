"""Sagittal-plane kinematics and dynamics of the exoskeleton.

The device is represented as two open serial chains, one rooted at each foot.
Each chain has six revolute joints ordered from the grounded foot upward and
then down the swinging leg::

    stance ankle, stance knee, stance hip, swing hip, swing knee, swing ankle

Controller-facing vectors use the device ordering
``[l_hip, l_knee, l_ankle, r_hip, r_knee, r_ankle]``; the chain keeps the
index map between the two (``GroundedChain.device_index``).

Angles are anatomical: hip flexion, knee flexion and ankle dorsiflexion are
positive.  Every chain row stores the relative link rotation as
``sign * q + offset`` so the anatomical angle is the generalized coordinate and
the returned torques are the generalized forces conjugate to it.

Internally positions live in a base frame with x pointing up the stance shank
and y pointing forward along the stance foot.  Public outputs are converted to
``(forward, up)`` pairs.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

N_JOINTS = 6
DEVICE_JOINTS = ("l_hip", "l_knee", "l_ankle", "r_hip", "r_knee", "r_ankle")
CHAIN_JOINTS = (
    "stance_ankle",
    "stance_knee",
    "stance_hip",
    "swing_hip",
    "swing_knee",
    "swing_ankle",
)
ANKLE_INDICES = (2, 5)
GRAVITY = 9.81


class ValidationError(ValueError):
    """An invariant of a model input is violated.

    ``field`` names the offending attribute so configuration loaders can
    report a full path.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class Side(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"

    @property
    def other(self) -> "Side":
        return Side.RIGHT if self is Side.LEFT else Side.LEFT

    @property
    def label(self) -> int:
        """Stance class used by the calibration regression (+1 left, -1 right)."""
        return 1 if self is Side.LEFT else -1


# chain position -> device index
_CHAIN_TO_DEVICE = {
    Side.LEFT: (2, 1, 0, 3, 4, 5),
    Side.RIGHT: (5, 4, 3, 0, 1, 2),
}


def mirror_device(x):
    """Swap the left and right halves of a device-ordered vector."""
    x = np.asarray(x)
    return np.concatenate([x[..., 3:6], x[..., 0:3]], axis=-1)


@dataclass(frozen=True)
class ExoParams:
    """Geometry and inertia of the exoskeleton.

    Legs are symmetric so per-link values are given once per segment type.
    COM offsets are measured from the proximal joint (hip for the thigh, knee
    for the shank, ankle for the foot, hip for the back-link) along the
    segment.  ``None`` COM offsets default to mid-segment (foot: at the ankle
    axis) and ``None`` inertias to the slender-rod value ``m L^2 / 12``.
    """

    shank_length: float = 0.246 * 1.75
    thigh_length: float = 0.245 * 1.75
    height: float = 1.10
    foot_length: float = 0.25
    back_mass: float = 7.0
    thigh_mass: float = 2.5
    shank_mass: float = 1.2
    foot_mass: float = 0.3
    total_mass: float = 15.0
    back_com: float | None = None
    thigh_com: float | None = None
    shank_com: float | None = None
    foot_com: float | None = 0.0
    back_inertia: float | None = None
    thigh_inertia: float | None = None
    shank_inertia: float | None = None
    foot_inertia: float | None = None
    thigh_cuff: float = 0.20
    shank_cuff: float = 0.12

    def __post_init__(self):
        for name in ("shank_length", "thigh_length", "height", "foot_length"):
            _require(self, name, getattr(self, name) > 0, "must be > 0")
        _require(self, "height", self.back_length > 0,
                 "must exceed shank_length + thigh_length")
        for seg in ("back", "thigh", "shank", "foot"):
            _require(self, f"{seg}_mass", getattr(self, f"{seg}_mass") > 0, "must be > 0")
        _require(self, "total_mass", abs(self.link_mass_sum - self.total_mass) <= 1e-9,
                 f"link masses sum to {self.link_mass_sum!r}")
        lengths = {"back": self.back_length, "thigh": self.thigh_length,
                   "shank": self.shank_length, "foot": self.foot_length}
        for seg, length in lengths.items():
            com = getattr(self, f"{seg}_com")
            if com is None:
                com = 0.5 * length
                object.__setattr__(self, f"{seg}_com", com)
            _require(self, f"{seg}_com", 0.0 <= com <= length, f"must lie in [0, {length}]")
            inertia = getattr(self, f"{seg}_inertia")
            if inertia is None:
                inertia = getattr(self, f"{seg}_mass") * length**2 / 12.0
                object.__setattr__(self, f"{seg}_inertia", inertia)
            _require(self, f"{seg}_inertia", inertia >= 0, "must be >= 0")
        _require(self, "thigh_cuff", 0 < self.thigh_cuff < self.thigh_length,
                 "must lie inside the thigh")
        _require(self, "shank_cuff", 0 < self.shank_cuff < self.shank_length,
                 "must lie inside the shank")

    @classmethod
    def for_user(cls, user_height: float, **overrides) -> "ExoParams":
        """Default device with segment lengths scaled to the wearer."""
        kw = dict(shank_length=0.246 * user_height, thigh_length=0.245 * user_height)
        kw.update(overrides)
        return cls(**kw)

    @property
    def back_length(self) -> float:
        return self.height - self.shank_length - self.thigh_length

    @property
    def link_mass_sum(self) -> float:
        return self.back_mass + 2 * (self.thigh_mass + self.shank_mass + self.foot_mass)


def _require(obj, name, ok, message):
    if not ok:
        raise ValidationError(name, f"{message} (got {getattr(obj, name, None)!r})")


@dataclass(frozen=True)
class Environment:
    """Walking surface and carried load.

    ``slope`` is positive for ascending ground.  The load is a point mass
    rigidly fixed ``load_offset`` metres behind the back-link COM.
    """

    slope: float = 0.0
    load_mass: float = 0.0
    gravity: float = GRAVITY
    load_offset: float = 0.10

    def __post_init__(self):
        _require(self, "slope", abs(self.slope) < math.pi / 4, "|slope| must be < pi/4")
        _require(self, "load_mass", self.load_mass >= 0, "must be >= 0")
        _require(self, "gravity", self.gravity >= 0, "must be >= 0")

    def gravity_in_base(self) -> np.ndarray:
        """Gravity vector in base (up, forward) coordinates of a foot on the slope."""
        return -self.gravity * np.array([math.cos(self.slope), math.sin(self.slope)])


@dataclass(frozen=True)
class JointLimits:
    hip: tuple[float, float] = (-2.0, 2.0)
    knee: tuple[float, float] = (0.0, 2.4)
    ankle: tuple[float, float] = (-0.8, 0.8)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.hip[0], self.knee[0], self.ankle[0]] * 2)
        hi = np.array([self.hip[1], self.knee[1], self.ankle[1]] * 2)
        return lo, hi


@dataclass(frozen=True)
class JointState:
    """Joint angles, rates and accelerations in device ordering.

    Arrays may carry leading batch dimensions, e.g. ``(n_samples, 6)``.
    """

    q: np.ndarray
    qd: np.ndarray | None = None
    qdd: np.ndarray | None = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        qd = np.zeros_like(q) if self.qd is None else np.asarray(self.qd, dtype=float)
        qdd = np.zeros_like(q) if self.qdd is None else np.asarray(self.qdd, dtype=float)
        for name, v in (("q", q), ("qd", qd), ("qdd", qdd)):
            if v.shape != q.shape:
                raise ValidationError(name, f"shape {v.shape} does not match q {q.shape}")
            if not np.all(np.isfinite(v)):
                raise ValidationError(name, "entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", qd)
        object.__setattr__(self, "qdd", qdd)

    def check_limits(self, limits: JointLimits | None = None) -> None:
        lo, hi = (limits or JointLimits()).bounds()
        bad = (self.q < lo) | (self.q > hi)
        if np.any(bad):
            joints = sorted({DEVICE_JOINTS[j] for j in np.nonzero(bad)[-1]})
            raise ValidationError("q", f"outside joint limits at {', '.join(joints)}")

    def to_chain(self, side: Side) -> "JointState":
        idx = list(_CHAIN_TO_DEVICE[side])
        return JointState(self.q[..., idx], self.qd[..., idx], self.qdd[..., idx])

    def mirrored(self) -> "JointState":
        return JointState(mirror_device(self.q), mirror_device(self.qd), mirror_device(self.qdd))


@dataclass(frozen=True, eq=False)
class GroundedChain:
    """DH-style table of a planar chain rooted at the grounded foot.

    Row ``i`` rotates link ``i`` by ``sign[i] * q_i + offset[i]`` relative to
    link ``i-1``; the next joint sits ``length[i]`` along the rotated x axis.
    ``com`` holds the link COM in link coordinates (along, perpendicular).
    """

    sign: np.ndarray
    offset: np.ndarray
    length: np.ndarray
    mass: np.ndarray
    com: np.ndarray
    inertia: np.ndarray
    gravity: np.ndarray
    device_index: tuple[int, ...]
    stance: Side | None = None
    base_mass: float = 0.0
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        for name in ("sign", "offset", "length", "mass", "com", "inertia", "gravity"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(self.sign)
        if self.com.shape != (n, 2):
            raise ValidationError("com", f"expected shape ({n}, 2)")
        if len(self.device_index) != n:
            raise ValidationError("device_index", f"expected {n} entries")

    @property
    def n_joints(self) -> int:
        return len(self.sign)

    @property
    def total_mass(self) -> float:
        return float(self.base_mass + self.mass.sum())

    def table(self) -> list[dict]:
        """Rows of the table as plain dictionaries (for inspection and tests)."""
        names = self.names or tuple(f"j{i}" for i in range(self.n_joints))
        return [
            dict(joint=names[i], sign=float(self.sign[i]), offset=float(self.offset[i]),
                 length=float(self.length[i]), mass=float(self.mass[i]),
                 com=(float(self.com[i, 0]), float(self.com[i, 1])),
                 inertia=float(self.inertia[i]))
            for i in range(self.n_joints)
        ]

    def chain_q(self, x) -> np.ndarray:
        """Reorder a device-ordered array into chain order."""
        return np.asarray(x)[..., list(self.device_index)]

    def device_q(self, x) -> np.ndarray:
        """Scatter a chain-ordered array back into device order."""
        x = np.asarray(x)
        out = np.empty_like(x)
        out[..., list(self.device_index)] = x
        return out


def build_grounded_chain(exo: ExoParams, stance: Side, env: Environment | None = None) -> GroundedChain:
    """Six-joint chain rooted at the ``stance`` foot.

    The carried load is folded into the back-link row (mass, COM and inertia
    about the combined COM).  Gravity is expressed in the foot frame, i.e.
    rotated by the slope.
    """
    env = env or Environment()
    if not isinstance(exo, ExoParams):
        raise ValidationError("exo", "expected ExoParams")
    stance = Side(stance)

    lb, lt, ls, lf = exo.back_length, exo.thigh_length, exo.shank_length, exo.foot_length
    back_m, back_c, back_i = exo.back_mass, np.array([exo.back_com, 0.0]), exo.back_inertia
    if env.load_mass > 0:
        load_c = np.array([exo.back_com, -env.load_offset])
        m = back_m + env.load_mass
        c = (back_m * back_c + env.load_mass * load_c) / m
        back_i = (back_i + back_m * np.sum((back_c - c) ** 2)
                  + env.load_mass * np.sum((load_c - c) ** 2))
        back_m, back_c = m, c

    pi = math.pi
    sign = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0]
    offset = [0.0, 0.0, 0.0, pi, 0.0, -pi / 2]
    length = [ls, lt, 0.0, lt, ls, lf]
    mass = [exo.shank_mass, exo.thigh_mass, back_m, exo.thigh_mass, exo.shank_mass, exo.foot_mass]
    com = [
        [ls - exo.shank_com, 0.0],
        [lt - exo.thigh_com, 0.0],
        back_c,
        [exo.thigh_com, 0.0],
        [exo.shank_com, 0.0],
        [exo.foot_com, 0.0],
    ]
    inertia = [exo.shank_inertia, exo.thigh_inertia, back_i,
               exo.thigh_inertia, exo.shank_inertia, exo.foot_inertia]
    return GroundedChain(
        sign=sign, offset=offset, length=length, mass=mass, com=com, inertia=inertia,
        gravity=env.gravity_in_base(), device_index=_CHAIN_TO_DEVICE[stance],
        stance=stance, base_mass=exo.foot_mass, names=CHAIN_JOINTS,
    )


@dataclass(frozen=True)
class Frames:
    """Forward-kinematics output in base ``(forward, up)`` coordinates (m).

    ``joints[..., i, :]`` is the origin of joint ``i`` in chain order,
    ``tip`` the far end of the last link.
    """

    joints: np.ndarray
    coms: np.ndarray
    tip: np.ndarray

    @property
    def swing_foot(self) -> np.ndarray:
        return self.joints[..., -1, :]


def _perp(v):
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _link_geometry(chain: GroundedChain, qc):
    theta = np.cumsum(chain.sign * qc + chain.offset, axis=-1)
    u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    seg = chain.length[:, None] * u
    d = chain.com[:, 0:1] * u + chain.com[:, 1:2] * _perp(u)
    return u, seg, d


def forward_kinematics(chain: GroundedChain, q) -> Frames:
    """Joint, COM and tip positions for device-ordered angles ``q``."""
    if isinstance(q, JointState):
        q = q.q
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValidationError("q", "entries must be finite")
    _, seg, d = _link_geometry(chain, chain.chain_q(q))
    ends = np.cumsum(seg, axis=-2)
    origins = ends - seg
    coms = origins + d
    flip = [1, 0]
    return Frames(origins[..., flip], coms[..., flip], ends[..., -1, flip])


def _rnea(chain: GroundedChain, qc, qdc, qddc, gravity) -> np.ndarray:
    """Planar recursive Newton-Euler in chain order; returns chain-ordered torques."""
    _, seg, d = _link_geometry(chain, qc)
    w = np.cumsum(chain.sign * qdc, axis=-1)
    wd = np.cumsum(chain.sign * qddc, axis=-1)
    n = chain.n_joints

    # base acceleration -g folds gravity into the inertial terms
    acc = np.broadcast_to(-np.asarray(gravity, dtype=float), seg.shape[:-2] + (2,))
    acc_com = []
    for i in range(n):
        wi, wdi = w[..., i, None], wd[..., i, None]
        acc_com.append(acc + wdi * _perp(d[..., i, :]) - wi**2 * d[..., i, :])
        acc = acc + wdi * _perp(seg[..., i, :]) - wi**2 * seg[..., i, :]

    tau = np.empty(qc.shape)
    f_next = np.zeros(seg.shape[:-2] + (2,))
    n_next = np.zeros(seg.shape[:-2])
    for i in reversed(range(n)):
        f_i = chain.mass[i] * acc_com[i]
        n_i = (chain.inertia[i] * wd[..., i] + _cross(d[..., i, :], f_i)
               + n_next + _cross(seg[..., i, :], f_next))
        tau[..., i] = chain.sign[i] * n_i
        f_next = f_i + f_next
        n_next = n_i
    return tau


def _as_state(state) -> JointState:
    return state if isinstance(state, JointState) else JointState(np.asarray(state, dtype=float))


def gravity_torques(chain: GroundedChain, q) -> np.ndarray:
    """Torques that hold the chain static against gravity, ``dV/dq``.

    Accepts a ``JointState`` or a device-ordered angle array (batched or not)
    and returns device-ordered torques in N m.
    """
    state = _as_state(q)
    qc = chain.chain_q(state.q)
    zero = np.zeros_like(qc)
    return chain.device_q(_rnea(chain, qc, zero, zero, chain.gravity))


def gravity_load(chain: GroundedChain, q) -> np.ndarray:
    """Generalized gravity force ``-dV/dq``; the negative of :func:`gravity_torques`."""
    return -gravity_torques(chain, q)


def inertia_torques(chain: GroundedChain, state: JointState) -> np.ndarray:
    """``M(q) qdd + C(q, qd) qd`` for the grounded chain (no gravity)."""
    state = _as_state(state)
    tau = _rnea(chain, chain.chain_q(state.q), chain.chain_q(state.qd),
                chain.chain_q(state.qdd), np.zeros(2))
    return chain.device_q(tau)


def compensation_torques(chain: GroundedChain, state: JointState) -> np.ndarray:
    """Feed-forward gravity plus inertia compensation for one grounded model."""
    state = _as_state(state)
    tau = _rnea(chain, chain.chain_q(state.q), chain.chain_q(state.qd),
                chain.chain_q(state.qdd), chain.gravity)
    return chain.device_q(tau)


def force_jacobian(chain: GroundedChain, q, link: int, along: float) -> np.ndarray:
    """Generalized forces produced by a unit force on ``link``.

    The force acts ``along`` metres from the link's joint, perpendicular to
    the link axis (rotated +90 degrees from it in the base frame).  Returns a
    device-ordered array; links after ``link`` receive nothing.
    """
    q = getattr(q, "q", q)
    qc = chain.chain_q(np.asarray(q, dtype=float))
    u, seg, _ = _link_geometry(chain, qc)
    origins = np.cumsum(seg, axis=-2) - seg
    p = origins[..., link, :] + along * u[..., link, :]
    normal = _perp(u[..., link, :])
    jac = np.zeros(qc.shape)
    for j in range(link + 1):
        jac[..., j] = chain.sign[j] * _cross(p - origins[..., j, :], normal)
    return chain.device_q(jac)
