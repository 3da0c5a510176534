"""Monte Carlo ensembles against the analytic answers.

Runs 4000 replicates of the recurrent model up to the time where the mean
population is 1000 and compares the extinction frequency, the growth rate
and the normalised transform with the solvers. Takes a few seconds.
"""

import numpy as np

from catbranch import criticality_report, extinction_report, run_ensemble, solve_phi
from catbranch.simulator import horizon_for_mean, mean_counts
from catbranch.verification import phi_vs_simulation, verify_q

from _common import model

m = model("m_rec")
crit = criticality_report(m)
ext = extinction_report(m)
t_end = horizon_for_mean(m, 1e3, crit.nu)
grid = np.linspace(0.0, t_end, 41)
ens = run_ensemble(m, grid, 4000, seed=7)

print(f"t_end = {t_end:.3f}, replicates = {ens.R}, truncated = {ens.truncated.sum()}")
exact = mean_counts(m, grid)[:, 0]
print(f"mean at t_end: simulated {ens.mean_total[-1]:.1f}, exact {exact[-1]:.1f}")
half = len(grid) // 2
slope = np.polyfit(grid[half:], np.log(ens.mean_total[half:]), 1)[0]
print(f"growth rate: fitted {slope:.4f}, nu {crit.nu:.4f}")

res = verify_q(m, ens, ext)
print(f"extinction: {res.metrics['extinct_fraction']:.4f} vs q = {res.metrics['q']:.4f} "
      f"-> {res.verdict}")

sol = solve_phi(m, crit, ext)
res = phi_vs_simulation(m, sol, ens, crit, ext)
print(f"transform: max deviation {res.metrics['max_abs_deviation']:.4f} "
      f"({res.metrics['max_z']:.2f} standard errors) -> {res.verdict}")
