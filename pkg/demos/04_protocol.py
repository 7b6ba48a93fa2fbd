"""
The eight-trial protocol from the command line
==============================================

``blendexo protocol`` runs every trial under both strategies with the ankle
on and off, then writes the runs, a comparison report and a manifest.
Here we drive the same entry point from Python and read the report back.
"""
# %%
import json
import sys
import tempfile
from pathlib import Path

from blendexo.cli import main

out = Path(tempfile.mkdtemp()) / "protocol"
status = main(["protocol", "--out", str(out), "--jobs", "4"])
print("exit status", status, file=sys.stderr)

# %%
report = json.loads((out / "report.json").read_text())
print(f"{'trial':>7} {'strategy':>8} {'ankle':>5} {'load':>5} {'max jump':>9} {'cuff mean':>9}")
for row in report["rows"]:
    lab, m = row["labels"], row["metrics"]
    print(f"{lab['condition']:>7} {lab['strategy']:>8} {lab['ankle']:>5} {lab['load']:>5} "
          f"{m['max_jump']:9.2f} {m['force_mean']:9.1f}")

# %%
# Loaded trials are compared with their unloaded twin under the FSM, passive ankle baseline.
for row in report["rows"]:
    if row["labels"]["condition"] == "trial3" and row["labels"]["strategy"] == "fsm":
        print(row["labels"]["ankle"], "peak required torque ratio vs trial1:",
              round(row["ratios"]["peak_required"], 3))
