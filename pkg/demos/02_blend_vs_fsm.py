"""
Blending the two stance models versus switching between them
============================================================

Calibrate the blend weights on synthetic treadmill walking.  Then run the
same 3.5 km/h trial with the continuous blend and with the finite-state
switch, and compare how abruptly the assistive torque changes.
"""
# %%
import numpy as np

from blendexo.control import ControllerConfig, Strategy, train_blend_weights
from blendexo.gait import GaitProfile, make_calibration_dataset
from blendexo.metrics import smoothness_metrics
from blendexo.sim import condition, run_trial

data = make_calibration_dataset(GaitProfile(speeds_kmh=(3.5,)), duration=30.0, rate=100.0)
weights = train_blend_weights(data.Q, data.c)
print("Y =", np.round(weights.Y, 3))

# %%
held = make_calibration_dataset(GaitProfile(speeds_kmh=(3.5,)), 30.0, 100.0, start=30.0)
single = held.trace.contact.sum(axis=1) == 1
pred = np.where(held.Q @ weights.Y > 0, 1, -1)
print(f"stance side recovered on {np.mean(pred[single] == held.c[single]):.1%} of held-out samples")

# %%
runs = {s: run_trial(condition("T3.5"), ControllerConfig(strategy=s), weights=weights)
        for s in Strategy}
for s, rec in runs.items():
    sm = smoothness_metrics(rec)
    print(f"{s.value:>5}: max jump {sm.overall_max_jump:6.2f} N·m, "
          f"jumps over 5 N·m {sum(sm.jumps_above)}")

# %%
# The FSM jumps at every switch.  The blend moves its gain across double support.
rec = runs[Strategy.BLEND]
k = np.argmax(np.abs(np.diff(rec.gain_left)))
print("blend gain around the steepest change:", np.round(rec.gain_left[k - 3:k + 4], 3))
