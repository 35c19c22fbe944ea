"""Wealth and liability of a small insurer on a binomial tree.

Wealth earns a riskless rate and is partly invested in a risky asset:
x_{k+1} = (1 + r_k) x_k + rho_k u_k + sigma_k u_k w_k.
The liability is valued backwards from zero at the horizon:
y_k = E[(1 + lam_k) y_{k+1} - c_k x_k | F_k].

The liability recursion conditions on the current information, so y_k
still depends on the noise of step k.  The tree solution is compared with a
brute-force sum over every path.
"""

import numpy as np

from fbsde_tree import TreeTopology, insurance_demo
from fbsde_tree.lq import insurance_liability_by_paths, insurance_residual

N = 6
topo = TreeTopology(N)
r = np.full(N, 0.02)
rho = np.full(N, 0.04)
sigma = np.full(N, 0.25)
lam = np.full(N, 0.01)
c = np.linspace(0.05, 0.3, N)
# invest half of the initial capital at every node
u = [np.full((topo.n_nodes(k), 1), 0.5) for k in range(N)]

x, y = insurance_demo(topo, r, rho, sigma, lam, c, 1.0, u)
print("mean wealth by step:", np.round([float(topo.node_probabilities(k) @ x[k][:, 0])
                                        for k in range(N + 1)], 6))
print("y_0 after an up move / down move:", y[0][:, 0])
print("path-sum value of y_0:           ", insurance_liability_by_paths(
    topo, r, rho, sigma, lam, c, 1.0, u))
print("largest recursion defect:", insurance_residual(topo, r, rho, sigma, lam, c, 1.0, u, x, y))
