"""Blend assistance, its calibration regression, and the FSM baseline.

The Blend controller mixes the two grounded-model torques with gains that are
an affine function of the joint angles::

    s       = clip(Y . q, -1, 1)
    gamma_L = (s + 1) / 2,   gamma_R = 1 - gamma_L
    tau     = gamma_L * tau_L + gamma_R * tau_R

``Y`` comes from a ridge regression of the stance class (+1 left, -1 right)
on joint angles, without intercept.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .model import ANKLE_INDICES, DEVICE_JOINTS, N_JOINTS, Side, ValidationError

DEFAULT_RIDGE = 1e-8
WEIGHTS_SCHEMA_VERSION = 1


class SingularDesignError(ValueError):
    pass


class Strategy(str, enum.Enum):
    BLEND = "blend"
    FSM = "fsm"


@dataclass(frozen=True)
class BlendWeights:
    """Regression vector ``Y`` (1/rad, device ordering) with training metadata."""

    Y: np.ndarray
    n_samples: int = 0
    residual_norm: float = float("nan")
    ridge: float = DEFAULT_RIDGE
    joints: tuple[str, ...] = DEVICE_JOINTS
    normalized: bool = False

    def __post_init__(self):
        Y = np.array(self.Y, dtype=float)
        if Y.shape != (len(self.joints),):
            raise ValidationError("Y", f"expected {len(self.joints)} entries, got shape {Y.shape}")
        if not np.all(np.isfinite(Y)):
            raise ValidationError("Y", "entries must be finite")
        Y.setflags(write=False)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "joints", tuple(self.joints))

    def to_json(self) -> str:
        doc = {
            "schema_version": WEIGHTS_SCHEMA_VERSION,
            "joints": list(self.joints),
            "Y": [float(y) for y in self.Y],
            "ridge": self.ridge,
            "n_samples": self.n_samples,
            "residual_norm": self.residual_norm,
            "normalized": self.normalized,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BlendWeights":
        doc = json.loads(text)
        if doc.get("schema_version") != WEIGHTS_SCHEMA_VERSION:
            raise ValidationError("schema_version", f"unsupported {doc.get('schema_version')!r}")
        return cls(Y=doc["Y"], n_samples=doc["n_samples"], residual_norm=doc["residual_norm"],
                   ridge=doc["ridge"], joints=tuple(doc["joints"]),
                   normalized=doc.get("normalized", False))


def train_blend_weights(Q, c, ridge: float = DEFAULT_RIDGE) -> BlendWeights:
    """Solve ``min |Q Y - c|^2 + ridge |Y|^2`` through the normal equations.

    The Cholesky factorization of ``Q^T Q + ridge I`` is done by hand on the
    6x6 system so the result only depends on the input bits.
    """
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float)
    if Q.ndim != 2 or c.shape != (Q.shape[0],):
        raise ValidationError("Q", f"shape mismatch: Q {Q.shape}, c {c.shape}")
    n, p = Q.shape
    if n < p:
        raise ValidationError("Q", f"{n} rows for {p} unknowns")
    if not np.all(np.isin(c, (-1.0, 1.0))):
        raise ValidationError("c", "labels must be +1 or -1")
    if ridge < 0:
        raise ValidationError("ridge", "must be >= 0")
    if np.all(Q == Q[0]):
        raise SingularDesignError("degenerate dataset: all joint-angle rows are equal")

    A = Q.T @ Q + ridge * np.eye(p)
    b = Q.T @ c
    if ridge == 0 and np.linalg.matrix_rank(Q) < p:
        raise SingularDesignError("Q^T Q is singular; use ridge > 0")
    L = _cholesky(A)
    Y = _cho_solve(L, b)
    residual = float(np.linalg.norm(Q @ Y - c))
    return BlendWeights(Y=Y, n_samples=n, residual_norm=residual, ridge=float(ridge))


def _cholesky(A):
    n = len(A)
    L = np.zeros_like(A)
    for j in range(n):
        d = A[j, j] - L[j, :j] @ L[j, :j]
        if d <= 0:
            raise SingularDesignError("normal matrix is not positive definite; use ridge > 0")
        L[j, j] = np.sqrt(d)
        for i in range(j + 1, n):
            L[i, j] = (A[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L


def _cho_solve(L, b):
    n = len(b)
    z = np.zeros(n)
    for i in range(n):
        z[i] = (b[i] - L[i, :i] @ z[:i]) / L[i, i]
    x = np.zeros(n)
    for i in reversed(range(n)):
        x[i] = (z[i] - L[i + 1:, i] @ x[i + 1:]) / L[i, i]
    return x


@dataclass(frozen=True)
class BlendGains:
    left: np.ndarray | float
    right: np.ndarray | float

    def __iter__(self):
        return iter((self.left, self.right))


def blend_gains(weights, q, clamp: bool = True) -> BlendGains:
    """Blend gains for device-ordered joint angles (batched along leading axes).

    ``weights`` may also be a batch of Y vectors matching the batch of ``q``.

    ``clamp=False`` leaves ``Y . q`` unclamped and is only meant for
    inspecting the raw regression output; the gains then leave ``[0, 1]``.
    """
    Y = weights.Y if isinstance(weights, BlendWeights) else np.asarray(weights, dtype=float)
    q = getattr(q, "q", q)
    q = np.asarray(q, dtype=float)
    s = q @ Y if Y.ndim == 1 else np.einsum("...i,...i->...", q, Y)
    if clamp:
        s = np.clip(s, -1.0, 1.0)
    left = 0.5 * (s + 1.0)
    right = 1.0 - left
    if np.ndim(left) == 0:
        return BlendGains(float(left), float(right))
    return BlendGains(left, right)


def blend_torque(tau_left, tau_right, gains: BlendGains) -> np.ndarray:
    """Convex combination of the two model torques."""
    tau_left = np.asarray(tau_left, dtype=float)
    tau_right = np.asarray(tau_right, dtype=float)
    if tau_left.shape != tau_right.shape:
        raise ValidationError("tau", f"length mismatch {tau_left.shape} vs {tau_right.shape}")
    gl = np.asarray(gains.left, dtype=float)[..., None] if np.ndim(gains.left) else gains.left
    gr = np.asarray(gains.right, dtype=float)[..., None] if np.ndim(gains.right) else gains.right
    return gl * tau_left + gr * tau_right


@dataclass(frozen=True)
class ControllerConfig:
    strategy: Strategy = Strategy.BLEND
    ankle_actuated: bool = False
    fsm_threshold: float = 50.0
    fsm_dwell: float = 0.2
    clamp: bool = True

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if not self.fsm_threshold > 0:
            raise ValidationError("fsm_threshold", "must be > 0")
        if self.fsm_dwell < 0:
            raise ValidationError("fsm_dwell", "must be >= 0")
        if not self.clamp:
            raise ValidationError("clamp", "only the clamping policy keeps gains in [0, 1]")

    @property
    def mask(self) -> np.ndarray:
        """Per-joint actuation mask in device order (hips and knees always on)."""
        m = np.ones(N_JOINTS, dtype=bool)
        if not self.ankle_actuated:
            m[list(ANKLE_INDICES)] = False
        return m


@dataclass(frozen=True)
class FsmState:
    side: Side = Side.LEFT
    last_switch: float = float("-inf")


def fsm_step(state: FsmState, sample, cfg: ControllerConfig) -> FsmState:
    """Advance the stance FSM by one insole reading.

    The model switches to the other side once that foot is loaded above the
    threshold, the current foot is unloaded below it and the dwell time since
    the last switch has elapsed.
    """
    sums = np.asarray(sample.pressure).sum(axis=-1)
    ipsi, contra = (sums[0], sums[1]) if state.side is Side.LEFT else (sums[1], sums[0])
    if (contra > cfg.fsm_threshold and ipsi < cfg.fsm_threshold
            and sample.t - state.last_switch >= cfg.fsm_dwell):
        return replace(state, side=state.side.other, last_switch=sample.t)
    return state


def fsm_gains(sides) -> BlendGains:
    """Hard 0/1 gains for one FSM selection or a sequence of them."""
    if isinstance(sides, (Side, str)):
        left = 1.0 if Side(sides) is Side.LEFT else 0.0
        return BlendGains(left, 1.0 - left)
    left = np.array([1.0 if Side(s) is Side.LEFT else 0.0 for s in sides])
    return BlendGains(left, 1.0 - left)


@dataclass(frozen=True)
class AppliedTorques:
    """Torque sent to the actuators and the unmasked command it came from."""

    tau: np.ndarray
    command: np.ndarray
    mask: np.ndarray = field(repr=False)


def assist_torques(cfg: ControllerConfig, tau_left, tau_right, gains=None,
                   fsm_state=None) -> AppliedTorques:
    """Combine the model torques per strategy, then zero non-actuated joints.

    Blend uses ``gains`` (a ``BlendGains``); FSM uses the selection in
    ``fsm_state`` (an ``FsmState``, a ``Side`` or a sequence of sides).
    """
    if cfg.strategy is Strategy.BLEND:
        if gains is None:
            raise ValidationError("gains", "Blend strategy needs blend gains")
        g = gains
    else:
        if fsm_state is None:
            raise ValidationError("fsm_state", "FSM strategy needs the FSM selection")
        sides = fsm_state.side if isinstance(fsm_state, FsmState) else fsm_state
        g = fsm_gains(sides)
    command = blend_torque(tau_left, tau_right, g)
    mask = cfg.mask
    return AppliedTorques(tau=np.where(mask, command, 0.0), command=command, mask=mask)
