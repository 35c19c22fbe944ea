"""Watching the continuation ladder climb.

A strongly coupled linear instance is first solved with a single full step,
which fails to contract.  The default settings then fall back to a ladder of
smaller steps; the diagnostics show the grid of blending parameters, the
Picard iterations spent on each rung and the measured contraction factors.
The answer is checked against a stacked linear solve.
"""

from fbsde_tree import (ContinuationOptions, ConvergenceError, TreeTopology,
                        make_monotone_family, solve_fbsde, solve_linear_direct)

topo = TreeTopology(5)
coeffs, dom = make_monotone_family(topo, 2, seed=1100, coupling=1.0)

try:
    solve_fbsde(coeffs, dom, options=ContinuationOptions(delta_init=1.0, delta_min=1.0))
except ConvergenceError as exc:
    print("single full step:", exc)

sol, diag = solve_fbsde(coeffs, dom, options=ContinuationOptions(tol=1e-12))
print("accepted grid:     ", diag.alpha_grid)
print("Picard iterations: ", diag.iterations)
print("contraction:       ", [round(c, 3) for c in diag.contraction])
for attempt in diag.attempts:
    print("  attempt", attempt["delta"], attempt["status"])
print("residual:", f"{diag.residual:.2e}")
print("distance to stacked solve:", f"{sol.relative_distance(solve_linear_direct(coeffs)):.2e}")
