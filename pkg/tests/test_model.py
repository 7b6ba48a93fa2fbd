import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blendexo.model import (
    DEVICE_JOINTS,
    Environment,
    ExoParams,
    GroundedChain,
    JointState,
    Side,
    ValidationError,
    build_grounded_chain,
    compensation_torques,
    forward_kinematics,
    gravity_load,
    gravity_torques,
    inertia_torques,
    mirror_device,
)
from conftest import random_q
from oracles import ChainOracle

EXO = ExoParams()


def one_link(mass=10.0, com=0.5, inertia=0.0, g=9.81):
    return GroundedChain(sign=[1.0], offset=[0.0], length=[1.0], mass=[mass], com=[[com, 0.0]],
                         inertia=[inertia], gravity=[-g, 0.0], device_index=(0,))


# parameters ---------------------------------------------------------------

def test_default_exo_masses_sum_to_15kg():
    chain = build_grounded_chain(EXO, Side.LEFT)
    assert chain.total_mass == pytest.approx(15.0, abs=1e-9)
    assert EXO.height == 1.10


@pytest.mark.parametrize("field,value", [
    ("thigh_length", -0.1), ("shank_mass", 0.0), ("thigh_com", 9.0), ("back_inertia", -1.0),
    ("total_mass", 14.0), ("height", 0.5), ("thigh_cuff", 0.0),
])
def test_exo_validation_names_the_field(field, value):
    with pytest.raises(ValidationError) as err:
        replace(EXO, **{field: value})
    assert err.value.field in (field, "total_mass", "height")


def test_environment_validation():
    with pytest.raises(ValidationError, match="slope"):
        Environment(slope=math.pi / 4)
    with pytest.raises(ValidationError, match="load_mass"):
        Environment(load_mass=-1.0)


def test_load_adds_to_back_link_mass():
    plain = build_grounded_chain(EXO, Side.LEFT)
    loaded = build_grounded_chain(EXO, Side.LEFT, Environment(load_mass=10.0))
    assert loaded.mass[2] == pytest.approx(plain.mass[2] + 10.0)
    assert loaded.total_mass == pytest.approx(25.0)


def test_mirrored_sides_have_identical_tables():
    left = build_grounded_chain(EXO, Side.LEFT).table()
    right = build_grounded_chain(EXO, Side.RIGHT).table()
    assert left == right
    assert build_grounded_chain(EXO, Side.LEFT).device_index == (2, 1, 0, 3, 4, 5)
    assert build_grounded_chain(EXO, Side.RIGHT).device_index == (5, 4, 3, 0, 1, 2)


def test_joint_state_ordering_roundtrip(rng):
    q = rng.normal(size=6)
    s = JointState(q)
    chain = build_grounded_chain(EXO, Side.RIGHT)
    assert np.array_equal(chain.device_q(chain.chain_q(q)), q)
    assert np.array_equal(s.to_chain(Side.LEFT).q, q[[2, 1, 0, 3, 4, 5]])
    assert np.array_equal(s.mirrored().mirrored().q, q)


def test_joint_state_rejects_nonfinite_and_limits():
    with pytest.raises(ValidationError):
        JointState([0, 0, np.nan, 0, 0, 0])
    with pytest.raises(ValidationError, match="l_knee"):
        JointState([0, -0.5, 0, 0, 0, 0]).check_limits()


# kinematics -----------------------------------------------------------------

def test_zero_configuration_is_vertical():
    chain = build_grounded_chain(EXO, Side.LEFT)
    fr = forward_kinematics(chain, np.zeros(6))
    assert np.allclose(fr.joints[:, 0], 0.0, atol=1e-15)
    assert fr.swing_foot[1] == pytest.approx(0.0, abs=1e-15)
    assert fr.joints[2, 1] == pytest.approx(EXO.shank_length + EXO.thigh_length)
    path = np.sum(np.linalg.norm(np.diff(np.vstack([fr.joints, fr.tip]), axis=0), axis=1))
    assert path == pytest.approx(chain.length.sum())


@pytest.mark.parametrize("side", list(Side))
def test_fk_matches_transform_oracle(rng, side):
    env = Environment(slope=0.1, load_mass=5.0)
    chain = build_grounded_chain(EXO, side, env)
    oracle = ChainOracle(EXO, side, env)
    for q in random_q(rng, 50):
        fr = forward_kinematics(chain, q)
        links, _, tip = oracle.frames(q)
        origins = np.array([o for o, _, _ in links])[:, ::-1]
        assert np.allclose(fr.joints, origins, atol=1e-12)
        assert np.allclose(fr.tip, tip[::-1], atol=1e-12)
        # the back-link COM moves with the load; the others must match exactly
        coms = np.array([c for _, c, _ in links])[:, ::-1]
        keep = [0, 1, 3, 4, 5]
        assert np.allclose(fr.coms[keep], coms[keep], atol=1e-12)


def test_fk_batched_equals_loop(rng):
    chain = build_grounded_chain(EXO, Side.LEFT)
    Q = random_q(rng, 20)
    batch = forward_kinematics(chain, Q)
    for k, q in enumerate(Q):
        assert np.allclose(batch.coms[k], forward_kinematics(chain, q).coms, atol=0)


# gravity ------------------------------------------------------------------------

def test_single_link_pendulum():
    chain = one_link()
    # gravity pulls a horizontal link with 10 kg * 9.81 * 0.5 = 49.05 N m
    assert gravity_load(chain, [math.pi / 2])[0] == pytest.approx(49.05, abs=1e-12)
    assert gravity_torques(chain, [-math.pi / 2])[0] == pytest.approx(49.05, abs=1e-12)


def test_vertical_posture_has_no_gravity_torque():
    chain = build_grounded_chain(EXO, Side.LEFT)
    # q = 0 puts the swing foot link horizontal; drop its mass for this check
    chain = replace(chain, mass=np.r_[chain.mass[:5], 0.0])
    assert np.allclose(gravity_torques(chain, np.zeros(6)), 0.0, atol=1e-12)


@pytest.mark.parametrize("side", list(Side))
def test_gravity_matches_potential_gradient(rng, side):
    for _ in range(30):
        env = Environment(slope=rng.uniform(-0.7, 0.7), load_mass=rng.uniform(0, 20))
        chain = build_grounded_chain(EXO, side, env)
        q = random_q(rng)
        fd = ChainOracle(EXO, side, env).grad_potential(q)
        tau = gravity_torques(chain, q)
        assert np.linalg.norm(tau - fd) <= 1e-6 * np.linalg.norm(fd)
        assert np.array_equal(gravity_load(chain, q), -tau)


def test_gravity_linear_in_masses(rng):
    base = build_grounded_chain(EXO, Side.LEFT)
    q = random_q(rng)
    massless = replace(base, mass=np.zeros(6))
    assert np.allclose(gravity_torques(massless, q), 0.0)
    for i in range(6):
        m = base.mass.copy()
        m[i] *= 3.0
        scaled = gravity_torques(replace(base, mass=m), q) - gravity_torques(base, q)
        m[i] = base.mass[i] * 2.0
        assert np.allclose(scaled, 2 * (gravity_torques(replace(base, mass=m), q)
                                        - gravity_torques(base, q)), atol=1e-9)
    t = [gravity_torques(build_grounded_chain(EXO, Side.LEFT, Environment(load_mass=m)), q)
         for m in (0.0, 5.0, 10.0)]
    assert np.allclose(t[2] - t[0], 2 * (t[1] - t[0]), atol=1e-9)


def test_slope_equals_rotated_world(rng):
    alpha = math.radians(10.0)
    flat = build_grounded_chain(EXO, Side.LEFT)
    sloped = build_grounded_chain(EXO, Side.LEFT, Environment(slope=alpha))
    c, s = math.cos(alpha), math.sin(alpha)
    rotated = replace(flat, gravity=np.array([[c, -s], [s, c]]) @ flat.gravity)
    for q in random_q(rng, 20):
        assert np.allclose(gravity_torques(sloped, q), gravity_torques(rotated, q),
                           atol=1e-12, rtol=0)
    zero = build_grounded_chain(EXO, Side.LEFT, Environment(slope=0.0))
    q = random_q(rng)
    assert np.array_equal(gravity_torques(zero, q), gravity_torques(flat, q))


def test_mirror_symmetry(rng):
    left = build_grounded_chain(EXO, Side.LEFT, Environment(slope=0.1, load_mass=3.0))
    right = build_grounded_chain(EXO, Side.RIGHT, Environment(slope=0.1, load_mass=3.0))
    for _ in range(20):
        q, qd, qdd = random_q(rng), rng.normal(size=6), rng.normal(size=6)
        s = JointState(q, qd, qdd)
        tl = compensation_torques(left, s)
        tr = compensation_torques(right, s.mirrored())
        assert np.allclose(mirror_device(tl), tr, atol=1e-9)


# inertia ------------------------------------------------------------------------

def test_single_link_inertia():
    chain = one_link(mass=3.0, com=0.4, inertia=0.2)
    tau = inertia_torques(chain, JointState([0.3], [0.0], [2.0]))
    assert tau[0] == pytest.approx((0.2 + 3.0 * 0.4**2) * 2.0, rel=1e-14)


def test_static_and_zero_gravity_additivity(rng):
    chain = build_grounded_chain(EXO, Side.RIGHT, Environment(slope=-0.2, load_mass=7.0))
    q = random_q(rng)
    assert np.array_equal(compensation_torques(chain, JointState(q)), gravity_torques(chain, q))
    assert np.allclose(inertia_torques(chain, JointState(q)), 0.0)
    s = JointState(q, rng.normal(size=6), rng.normal(size=6))
    weightless = build_grounded_chain(EXO, Side.RIGHT,
                                      Environment(slope=-0.2, load_mass=7.0, gravity=0.0))
    assert np.allclose(compensation_torques(weightless, s), inertia_torques(chain, s), atol=1e-12)
    assert np.allclose(compensation_torques(chain, s),
                       gravity_torques(chain, q) + inertia_torques(chain, s), atol=1e-12)


def smooth_trajectory(rng):
    q0 = random_q(rng, margin=0.4)
    amp, w, ph = rng.uniform(0.05, 0.3, 6), rng.uniform(1, 8, 6), rng.uniform(0, 2 * np.pi, 6)

    def q(t):
        return q0 + amp * np.sin(w * t + ph)

    def qd(t):
        return amp * w * np.cos(w * t + ph)

    def qdd(t):
        return -amp * w * w * np.sin(w * t + ph)
    return q, qd, qdd


def power_balance_error(rng, side=Side.LEFT):
    env = Environment(slope=rng.uniform(-0.5, 0.5), load_mass=rng.uniform(0, 15))
    chain = build_grounded_chain(EXO, side, env)
    oracle = ChainOracle(EXO, side, env)
    q, qd, qdd = smooth_trajectory(rng)
    t, h = rng.uniform(0, 2), 1e-4
    dE = (oracle.energy(q, t + h) - oracle.energy(q, t - h)) / (2 * h)
    tau = compensation_torques(chain, JointState(q(t), qd(t), qdd(t)))
    power = tau @ qd(t)
    scale = np.abs(tau * qd(t)).sum()
    return abs(power - dE) / scale


def test_power_balance_few(rng):
    for side in Side:
        for _ in range(5):
            assert power_balance_error(rng, side) < 1e-4


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=6, max_size=6),
       st.floats(-0.7, 0.7), st.floats(0.0, 30.0))
def test_gravity_torques_finite_and_bounded(q, slope, load):
    chain = build_grounded_chain(EXO, Side.LEFT, Environment(slope=slope, load_mass=load))
    tau = gravity_torques(chain, np.abs(q) * [1, 1, 0.5, 1, 1, 0.5])
    reach = chain.length.sum() + 0.2
    assert np.all(np.isfinite(tau))
    assert np.all(np.abs(tau) <= chain.total_mass * 9.81 * reach)


def test_device_joint_names():
    assert DEVICE_JOINTS == ("l_hip", "l_knee", "l_ankle", "r_hip", "r_knee", "r_ankle")
