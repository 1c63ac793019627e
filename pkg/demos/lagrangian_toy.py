"""Two-state constrained problem: the LP optimum randomizes in one state, and
the Lagrangian dual recovers the same value.

Run with ``python demos/lagrangian_toy.py``.
"""

import numpy as np

from quantcmdp import solve_average, solve_discounted
from quantcmdp.discounted import dual_function
from quantcmdp.families import toy2

fm = toy2()
sol = solve_discounted(fm)
print("discounted optimum:", round(sol.value, 10))
print("policy table:\n", np.round(sol.policy.table, 6))
print("multiplier delta:", sol.dual.delta, " dual objective:", round(sol.dual.objective, 10))

# the dual function never exceeds the primal optimum and peaks at delta above
deltas = np.linspace(-5.0, 0.0, 501)
duals = [dual_function(fm, [d])[0] for d in deltas]
print("max of the dual function over a multiplier grid:", round(max(duals), 10))

avg = solve_average(fm)
print("average-cost optimum:", round(avg.value, 10))
