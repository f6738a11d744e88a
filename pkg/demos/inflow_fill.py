"""A denser mixture enters through the left end and fills the interval.

Runs the bundled ``inflow-fill`` scenario, prints the certificate report and
follows the four species masses through the boundary ledger.
"""
import numpy as np

from bifluid.coupling import energy_ledger, run_level1
from bifluid.scenario import load_scenario
from bifluid.transport import mass_ledger

scen = load_scenario("inflow-fill")
traj, report = run_level1(scen)
print(report.summary())

ml = mass_ledger(traj)
print("\nstep   " + "  ".join(f"{sp:>10s}" for sp in traj.species))
for n in np.linspace(0, traj.n_steps, 6).astype(int):
    print(f"{n:4d}   " + "  ".join(f"{m:10.6f}" for m in ml["mass"][n]))
print("largest relative ledger residual:", f"{ml['relative'].max():.2e}")

en = energy_ledger(traj, scen.law, scen.bd)
print("smallest relative energy defect:", f"{en['min_defect_relative']:.2e}")
print("fixed-point iterations per step: max", int(traj.iterations.max()),
      "mean", f"{traj.iterations.mean():.1f}")
