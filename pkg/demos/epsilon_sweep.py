"""Vanishing diffusion: the ratio s = Z/R becomes compact as eps goes to zero.

Each member of the sweep is a full run of the ``smooth`` scenario; the
functional measures the distance of its ratio field to the finest member.
"""
from bifluid.coupling import sweep_epsilon
from bifluid.scenario import load_scenario

res = sweep_epsilon(load_scenario("smooth"), [1e-1, 1e-2, 1e-3, 1e-4])
print(f"{'eps':>8s}  {'ratio functional':>16s}  certificates")
for row in res["rows"]:
    print(f"{row['eps']:8.0e}  {row['ratio_functional']:16.3e}  {row['certificates_ok']}")
