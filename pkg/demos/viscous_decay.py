"""One velocity mode decaying in a closed box with frozen densities.

The Galerkin coefficient follows backward Euler for c' = -nu k^2 c, and the
lost kinetic energy is accounted for by viscous and time dissipation.
"""
import numpy as np

from bifluid.coupling import energy_ledger, run_level1
from bifluid.scenario import load_scenario

scen = load_scenario("viscous-decay")
traj, _ = run_level1(scen)
rho = traj.fields[0][:, 0] + traj.fields[0][:, 1]
nu = (2 * scen.params.mu + scen.params.lam) / rho[0]
k2 = np.pi ** 2
dt = scen.params.dt
ref = traj.coeffs[0][0] / (1 + dt * nu * k2) ** np.arange(traj.n_steps + 1)
print("first coefficient vs backward-Euler ODE, max gap:",
      f"{np.abs(traj.coeffs[:, 0] - ref).max():.2e}")
en = energy_ledger(traj, scen.law, scen.bd)
print(f"kinetic loss {en['kinetic_loss']:.6e}  dissipation {en['dissipation']:.6e}  "
      f"viscous part {en['viscous_only']:.6e}")
