"""
The exoskeleton as two stance-grounded chains
=============================================

Whichever foot is on the ground becomes the base of a six-joint planar
chain.  Here we build both chains, look at where the joints land, and see
how slope and a backpack change the gravity torques.
"""
# %%
import numpy as np

from blendexo.model import (Environment, ExoParams, JointState, Side, build_grounded_chain,
                            compensation_torques, forward_kinematics, gravity_torques)

exo = ExoParams.for_user(1.75)
print(f"thigh {exo.thigh_length:.3f} m, shank {exo.shank_length:.3f} m, total {exo.total_mass} kg")

# %%
# Device order is [l_hip, l_knee, l_ankle, r_hip, r_knee, r_ankle].  A small
# step: left leg forward and loaded, right leg trailing.
q = np.radians([20.0, 5.0, -10.0, -15.0, 30.0, 10.0])
left = build_grounded_chain(exo, Side.LEFT)
frames = forward_kinematics(left, q)
for name, p in zip(("ankle", "knee", "hip", "hip'", "knee'", "ankle'"), frames.joints):
    print(f"{name:>7}: fwd {p[0]:+.3f} m, up {p[1]:+.3f} m")

# %%
# Gravity torque is the torque that holds the posture still.
print("flat      ", np.round(gravity_torques(left, q), 2))
for env in (Environment(slope=np.radians(10)), Environment(load_mass=10.0)):
    chain = build_grounded_chain(exo, Side.LEFT, env)
    print(f"slope {np.degrees(env.slope):4.1f}°, load {env.load_mass:4.1f} kg ",
          np.round(gravity_torques(chain, q), 2))

# %%
# Adding velocity and acceleration gives the full compensation torque.
state = JointState(q, qd=np.full(6, 1.0), qdd=np.full(6, 5.0))
print("compensation", np.round(compensation_torques(left, state), 2))
