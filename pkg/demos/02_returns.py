"""
Scoring a trajectory: quadratic against saturating returns
==========================================================

The controller is judged on how close both biomasses stay to 3 g/L. Two
families of return are available. The quadratic one punishes large
errors hardest; the saturating one rewards small errors and stops caring
once an error is large, with ``beta_e`` setting where that happens.
"""

# %%
import numpy as np

from cocultrl.returns import biomass_return, max_return, preset

designs = {name: preset(name) for name in ("case1", "case2", "case3", "case4")}

# %% [markdown]
# Perfect tracking for 18 hours. The saturating designs weight the last
# step twice, so their ceiling is 17 + 2 = 19.

# %%
perfect = np.full((18, 2), 3.0)
for name, cfg in designs.items():
    print(f"{name}: J(perfect) = {biomass_return(perfect, cfg) + 0.0:6.2f}   max = {max_return(cfg, 18):.1f}")

# %% [markdown]
# One strain on target, the other off by a growing amount. Watch the
# quadratic return keep falling while the saturating ones level out.

# %%
print(f"{'offset':>8}" + "".join(f"{n:>10}" for n in designs))
for off in (0.0, 0.25, 0.5, 1.0, 2.0, 3.0):
    b = np.tile([3.0, 3.0 + off], (18, 1))
    print(f"{off:8.2f}" + "".join(f"{biomass_return(b, c) + 0.0:10.3f}" for c in designs.values()))

# %% [markdown]
# That flattening is the point of the saturating design: early in training
# nearly every episode misses badly. A quadratic return then ranks episodes
# by how badly they missed, while the saturating one ranks them by how
# much time they spent near the setpoint.
