"""
Quadratic against saturating return, same budget
================================================

Trains the Case 1 (quadratic) and Case 3 (saturating) controllers with
identical settings apart from the return, then joins their learning curves.
Takes about a minute.
"""

# %%
import shutil
from pathlib import Path

import numpy as np

from cocultrl.experiment import cmd_compare, cmd_train

root = Path(__file__).resolve().parent.parent
runs = Path("runs")
for case in ("case1", "case3"):
    shutil.rmtree(runs / f"demo_{case}", ignore_errors=True)
    cmd_train(root / f"configs/{case}_desk.yaml", out=runs / f"demo_{case}", log=lambda msg: None)

# %%
res = cmd_compare([runs / "demo_case1", runs / "demo_case3"], out=runs / "demo_compare")
for name, s in res["summary"].items():
    err = np.round(s["final5h_abs_error_mean"], 3)
    print(f"{name:12} best epoch {s['best_epoch']:2d}  final-5h |b - 3| = {err}  worst {err.max()}")

# %% [markdown]
# The two returns live on different scales, so compare tracking error, not
# return. The quadratic run tends to settle on a policy that avoids large
# misses without getting close: its returns are dominated by the early
# hours, when biomass is far below 3 g/L whatever the light does.

# %%
print((runs / "demo_compare" / "comparison.csv").read_text().splitlines()[0])
