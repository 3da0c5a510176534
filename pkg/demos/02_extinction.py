"""Global and local extinction probabilities.

On the recurrent two-state chain every surviving population keeps visiting
the catalyst, so the global and local extinction probabilities coincide.
On the transient lattice walk (drift to the right) a surviving population
can escape the catalyst: q < Q < 1.
"""

import math

from catbranch import extinction_report

from _common import model

for name in ("m_rec", "m_det", "m_tra", "m_sub"):
    rep = extinction_report(model(name), query_states=[1])
    print(f"{name}: phase={rep.phase:22s} q={rep.q_x[0]:.9f}  Q={rep.Q_x[0]:.9f}  "
          f"q(1)={rep.q_x[1]:.6f}")

# closed forms for comparison
print("M-REC q = 1/3 =", 1 / 3)
print("M-TRA q = (16 - sqrt(148))/18 =", (16 - math.sqrt(148)) / 18, " Q = 7/9 =", 7 / 9)
