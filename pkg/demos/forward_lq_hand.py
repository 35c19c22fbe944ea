"""A one-step forward linear-quadratic problem solved three ways.

The state starts at a chosen initial value xi and moves once:
x_1 = x_0 + u_0 + 1.  The criterion is 1/2 (x_0^2 + x_1^2 + u_0^2).  Setting
the gradient to zero by hand gives xi = u_0 = -1/3 with cost 1/6.

We recover this through the optimality system (a coupled forward-backward
equation solved by continuation) and through the quadratic-program oracle.
"""

from fbsde_tree import ForwardLqData, TreeTopology, oracle_flq, solve_flq

topo = TreeTopology.two_point(1)
data = ForwardLqData.build(topo, 1, 1, A=1.0, B=1.0, b=1.0, M=1.0, G=1.0, R=1.0)

sol = solve_flq(data)
print("optimality system")
print(f"  xi   = {sol.xi[0]: .12f}")
print(f"  u_0  = {sol.u[0][0, 0]: .12f}")
print(f"  cost = {sol.cost: .12f}")
print(f"  stationarity defect {sol.stationarity:.1e}, "
      f"continuation vs stacked solve {sol.oracle_gap:.1e}")

ora = oracle_flq(data)
print("quadratic-program oracle")
print(f"  xi   = {ora.xi[0]: .12f}")
print(f"  cost = {ora.cost: .12f}  (gradient norm {ora.gradient_norm:.1e})")
print(f"closed form: xi = u_0 = {-1 / 3:.12f}, cost = {1 / 6:.12f}")
