"""Criticality and the Malthusian parameter.

The two-state recurrent model has a single catalyst at state 0. Each visit
either branches (mean offspring 1.5, probability 1/2) or sends the particle
to state 1, from which it returns after an Exp(1) holding time. The
spectral radius of D(0) is 1.25, so the model is supercritical and the mean
population grows like exp(nu t).
"""

from catbranch import classify, criticality_report, malthusian
from catbranch.spectral import build_D

from _common import model

m = model("m_rec")
rep = classify(m)
print(f"rho(D(0)) = {rep.rho0:.12f}  ->  {rep.cls}")

nu, width = malthusian(m)
print(f"nu = {nu:.12f}  (bisection bracket {width:.1e})")

# D(lam) is a 1x1 matrix here; its entry crosses 1 exactly at nu
for lam in (0.0, 0.1, nu, 0.3):
    print(f"  D({lam:.4f}) = {build_D(m, lam).entries[0, 0]:.6f}")

# c(x) relates the limit at x to the catalyst; it is 1 at the catalyst itself
full = criticality_report(m, query_states=[1])
print("c(x):", {x: round(v, 6) for x, v in full.c.items()})

# the same chain with offspring {0: 0.75, 2: 0.25} has mean 0.5
sub = model("m_sub")
print(f"subcritical variant: rho(D(0)) = {classify(sub).rho0:.4f}")
