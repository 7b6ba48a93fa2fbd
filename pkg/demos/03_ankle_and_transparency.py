"""
What a passive ankle leaves to the wearer
=========================================

With the ankle motors off, the ankle torque the controller would have
commanded is carried by the user.  It grows with speed, and the mismatch
shows up as forces at the cuffs.
"""
# %%
import numpy as np

from blendexo.control import ControllerConfig, train_blend_weights
from blendexo.gait import GaitProfile, make_calibration_dataset
from blendexo.metrics import ankle_stats, transparency_metrics
from blendexo.sim import condition, run_trial

data = make_calibration_dataset(GaitProfile(speeds_kmh=(3.5,)), 30.0, 100.0)
weights = train_blend_weights(data.Q, data.c)

passive = {name: run_trial(condition(name), ControllerConfig(), weights=weights)
           for name in ("T1", "T3.5", "SS")}

# %%
stats = ankle_stats({name: [rec] for name, rec in passive.items()})
print(f"{'':>5} {'avg':>7} {'sd':>7} {'max':>7}   (stance ankle, N·m)")
for name, s in stats.items():
    st = s["stance_leg"]
    print(f"{name:>5} {st.average:7.1f} {st.std:7.1f} {st.maximum:7.1f}")

# %%
for name, rec in passive.items():
    tr = transparency_metrics(rec)
    print(f"{name:>5}: cuff force mean {tr.pooled_mean:5.1f} N, peak {tr.pooled_peak:5.1f} N")

# %%
# Powering the ankle makes the exact model fully transparent in single support.
full = run_trial(condition("T3.5"), ControllerConfig(ankle_actuated=True), weights=weights)
print("max cuff force, single support:", np.abs(full.forces[full.single_support()]).max())
