"""Backward stochastic difference equations solved by one exact sweep.

The equation is ``y_N = xi`` and ``y_k = f(k+1, y'_{k+1}, z'_{k+1})`` with the
one-step conditional moments of :func:`fbsde_tree.tree.cond_prev`.  The sign is
``+f``; coupled solvers pass their drivers already negated.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .sde import EstimateRecord, _same_topology
from .tree import AdaptedProcess, TreeTopology, _sq, cond_prev, require_finite

__all__ = ["BsdeProblem", "solve_bsde", "bsde_stability_report"]


@dataclass(frozen=True)
class BsdeProblem:
    """Terminal field ``xi`` of shape ``(q**N, n)`` and driver ``f``.

    ``driver(k, yp, zp)`` evaluates ``f(k+1, .)`` on the level-``k`` fields.
    """

    topology: TreeTopology
    terminal: np.ndarray
    driver: object

    def __post_init__(self):
        xi = np.asarray(self.terminal, dtype=float)
        if xi.ndim == 1:
            xi = xi[:, None]
        if xi.ndim != 2 or xi.shape[0] != self.topology.n_nodes(self.topology.horizon):
            raise ShapeError(f"terminal field has shape {xi.shape}")
        require_finite(xi, self.topology.horizon, "terminal value")
        object.__setattr__(self, "terminal", xi)


def solve_bsde(problem):
    """Backward sweep; returns ``y_0 .. y_N`` as an :class:`AdaptedProcess`."""
    topo = problem.topology
    ys = [problem.terminal]
    for k in range(topo.horizon - 1, -1, -1):
        yp, zp = cond_prev(ys[-1], topo)
        y = require_finite(problem.driver(k, yp, zp), k, "driver output")
        if y.shape != yp.shape:
            raise ShapeError(f"driver output shape mismatch at k={k}")
        ys.append(y)
    return AdaptedProcess(topo, 0, ys[::-1])


def bsde_stability_report(problem, problem_bar):
    """Both sides of the backward stability estimates.

    The driver difference is evaluated along the barred conditional moments.
    """
    _same_topology(problem, problem_bar)
    topo = problem.topology
    y, yb = solve_bsde(problem), solve_bsde(problem_bar)
    lhs = sum(_sq(topo, y[k] - yb[k]) for k in y.times)
    N = topo.horizon
    rhs = _sq(topo, problem.terminal - problem_bar.terminal)
    rhs_zero = _sq(topo, problem.terminal)
    for k in range(N):
        yp, zp = cond_prev(yb[k + 1], topo)
        rhs += _sq(topo, problem.driver(k, yp, zp) - problem_bar.driver(k, yp, zp))
        zero = np.zeros_like(yp)
        rhs_zero += _sq(topo, problem.driver(k, zero, zero))
    lhs_zero = sum(_sq(topo, y[k]) for k in y.times)
    return EstimateRecord(float(lhs), float(rhs), float(lhs_zero), float(rhs_zero))
