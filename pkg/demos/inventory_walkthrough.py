"""Quantize the inventory model, solve it on a ladder of grids and check the
extended policy on the continuous model.

Run with ``python demos/inventory_walkthrough.py``; takes about two minutes.
"""

import numpy as np

from quantcmdp import build_finite_model, build_grid, extend_policy, mc_eval_original, solve_finite
from quantcmdp.families import inv1
from quantcmdp.policy import perturbed_solve
from quantcmdp.rates import RateConstants, discounted_value_bound, grid_threshold_discounted

model = inv1()
print(f"inventory model: beta={model.beta}, constraint level k={model.k.tolist()}")

# optimal finite values settle as the grid is refined
for r in (8, 32, 128, 512):
    grid = build_grid(model.space, r)
    fm = build_finite_model(model, grid)
    for crit in ("discounted", "average"):
        sol = solve_finite(fm, crit)
        print(f"  r={r:4d} {crit:10s} value={sol.value:.8f} "
              f"constraint={sol.constraint_values[0]:.5f}")

# the extended optimum on a fine grid, checked by simulation
grid = build_grid(model.space, 256)
sol = solve_finite(build_finite_model(model, grid))
ev = mc_eval_original(model, extend_policy(sol.policy, grid), horizon=80,
                      replications=5000, seed=1)
print(f"finite value {sol.value:.5f}; simulated {ev.value:.5f} +- {ev.value_hw:.5f}")

# a tightened policy is feasible for the continuous model, not just the grid
rc = RateConstants.from_model(model)
kappa = 0.1
n_star, eps = grid_threshold_discounted(kappa, rc)
print(f"kappa={kappa}: eps={eps:.4f}, grid threshold n={n_star}, "
      f"bound there {discounted_value_bound(n_star, rc):.4f}")
ext, rep = perturbed_solve(model, build_grid(model.space, int(n_star)), eps)
ev = mc_eval_original(model, ext, horizon=80, replications=5000, seed=2)
print(f"tightened value {rep.value:.5f}; simulated constraint "
      f"{ev.constraints[0]:.4f} + {ev.constraints_hw[0]:.4f} vs k={model.k[0]}")
print("feasible on the continuous model:", bool(np.all(ev.feasible)))
