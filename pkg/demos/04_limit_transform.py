"""Laplace transform of the limit variable.

phi(lam; x) = E_x exp(-lam zeta) solves a nonlinear integral system at the
catalysts. It starts at 1, has slope -1/c(x) at 0 and decreases to the
local extinction probability Q(x) as lam grows.
"""

import numpy as np

from catbranch import criticality_report, extinction_report, solve_phi, tail_limit

from _common import model

for name in ("m_rec", "m_tra"):
    m = model(name)
    crit = criticality_report(m, query_states=[1])
    ext = extinction_report(m, query_states=[1])
    sol = solve_phi(m, crit, ext, query_states=[1])
    print(f"{name}: residual {sol.residual:.1e}")
    for x in (0, 1):
        lam = np.array([0.1, 1.0, 10.0, 100.0])
        h = sol.lambda_grid[1]
        slope = (1 - sol.evaluate(h, x)[0]) / h
        limit, _ = tail_limit(sol, x)
        vals = " ".join(f"{v:.4f}" for v in sol.evaluate(lam, x))
        print(f"  x={x}: phi at 0.1/1/10/100 = {vals}; -phi'(0) = {slope:.5f} "
              f"(1/c = {1 / crit.c[x]:.5f}); tail -> {limit:.5f} (Q = {ext.Q_x[x]:.5f})")
