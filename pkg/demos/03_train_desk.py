"""
Training a light controller on a laptop
=======================================

REINFORCE on the Case 3 saturating return, at the small "desk" budget of
80 epochs x 128 episodes. About half a minute on one core.

Outputs go to ``runs/demo_case3`` (delete it to rerun; a finished run
directory is locked against overwriting).
"""

# %%
import json
import shutil
from pathlib import Path

import numpy as np

from cocultrl.experiment import cmd_evaluate, cmd_train

root = Path(__file__).resolve().parent.parent
out = Path("runs/demo_case3")
shutil.rmtree(out, ignore_errors=True)

# %%
manifest = cmd_train(root / "configs/case3_desk.yaml", out=out, log=lambda msg: None)
print("best epoch", manifest["best_epoch"], "mean return", round(manifest["best_mean_J"], 3), "of 19")

# %% [markdown]
# The learning curve, every tenth epoch. Near the end a large gradient step
# can knock the policy into a dead region: every episode turns out the same
# and the spread of returns collapses. The checkpoint kept is the best epoch,
# not the last one, so evaluation is unaffected.

# %%
rows = (out / "epoch_stats.csv").read_text().splitlines()
print(rows[0])
for line in rows[1::10]:
    print(line)

# %% [markdown]
# Roll the best policy out with its mean action (no exploration noise) and
# look at the biomass and light profiles hour by hour.

# %%
report = cmd_evaluate(out / "best.json", out / "manifest.json", n_episodes=1, deterministic=True,
                      out=out / "eval")
prof = report["profiles"]
states, lights = np.array(prof["state_mean"]), np.array(prof["input_mean"])
print(" t    b1     b2     I1     I2")
for t in range(len(states)):
    u = lights[t] if t < len(lights) else [np.nan, np.nan]
    print(f"{t:2d} {states[t, 1]:6.3f} {states[t, 2]:6.3f} {u[0]:6.3f} {u[1]:6.3f}")

# %%
print(json.dumps({k: np.round(report[k], 3).tolist() for k in
                  ("final5h_abs_error_mean", "final3h_mean_growth_rate")}))
print("dilution rate", report["dilution_rate"])
