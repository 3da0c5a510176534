"""Taboo passage transforms on the lattice.

For the nearest-neighbour walk with up-rate a=2 and down-rate b=1, the
passage from z+1 down to z has a closed-form Laplace transform. A passage
from x > 0 to 0 is a product of x such steps, which the window-doubling
solver reproduces to machine precision.
"""

from catbranch import bd_passage_transform, hitting_prob, taboo_transforms

from _common import model

m = model("m_tra")
a, b = 2.0, 1.0
for lam in (0.0, 0.5, 2.0):
    down = bd_passage_transform(a, b, lam, "down")
    vals, conv, err, _ = taboo_transforms(m, [3], 0, (), lam)
    # taboo transforms start the clock after the holding time at the source
    closed = down**3 * (a + b + lam) / (a + b)
    print(f"lam={lam:3.1f}  solver={vals[0]:.12f}  closed form={closed:.12f}  converged={conv}")

print("P(hit 0 from 5)  =", hitting_prob(m, 5, 0))
print("P(hit 0 from -5) =", hitting_prob(m, -5, 0))
print("P(return to 0)   =", hitting_prob(m, 0, 0))
