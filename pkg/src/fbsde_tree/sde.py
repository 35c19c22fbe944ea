"""Forward stochastic difference equations and their stability ratios."""

from dataclasses import dataclass
import math

import numpy as np

from .errors import ShapeError, UsageError
from .tree import AdaptedProcess, TreeTopology, _sq, require_finite

__all__ = ["SdeProblem", "EstimateRecord", "solve_sde", "sde_stability_report"]


@dataclass(frozen=True)
class SdeProblem:
    """``x_{k+1} = b(k, x_k) + sigma(k, x_k) w_k`` with ``x_0 = eta``.

    ``drift(k, x)`` and ``diffusion(k, x)`` receive the level-``k`` field of
    shape ``(q**k, n)`` and return the same shape.
    """

    topology: TreeTopology
    eta: np.ndarray
    drift: object
    diffusion: object

    def __post_init__(self):
        eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        if eta.ndim != 1:
            raise ShapeError("initial state must be a vector")
        if not np.all(np.isfinite(eta)):
            raise UsageError("initial state must be finite")
        object.__setattr__(self, "eta", eta)


@dataclass(frozen=True)
class EstimateRecord:
    """Empirical version of a stability estimate ``LHS <= C * RHS``.

    ``ratio`` is ``LHS / RHS``; it is 0 when both vanish and ``inf`` (with
    ``unbounded`` set) when only the right side vanishes.  ``lhs_zero`` and
    ``rhs_zero`` hold the same two sides for the comparison with zero data.
    """

    lhs: float
    rhs: float
    lhs_zero: float
    rhs_zero: float

    @staticmethod
    def _ratio(lhs, rhs):
        if rhs > 0:
            return lhs / rhs
        return 0.0 if lhs == 0 else math.inf

    @property
    def ratio(self):
        return self._ratio(self.lhs, self.rhs)

    @property
    def ratio_zero(self):
        return self._ratio(self.lhs_zero, self.rhs_zero)

    @property
    def unbounded(self):
        return math.isinf(self.ratio)

    def as_dict(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "ratio": self.ratio,
                "unbounded": self.unbounded, "lhs_zero_data": self.lhs_zero,
                "rhs_zero_data": self.rhs_zero, "ratio_zero_data": self.ratio_zero}


def solve_sde(problem):
    """Exact forward recursion over the tree.

    Returns
    -------
    AdaptedProcess
        ``x_0 .. x_N``; child ``j`` of a node receives ``b + sigma * w(j)``.
    """
    topo = problem.topology
    x = [problem.eta[None, :]]
    w = topo.w[None, :, None]
    for k in range(topo.horizon):
        b = require_finite(problem.drift(k, x[-1]), k, "drift")
        s = require_finite(problem.diffusion(k, x[-1]), k, "diffusion")
        if b.shape != x[-1].shape or s.shape != x[-1].shape:
            raise ShapeError(f"coefficient output shape mismatch at k={k}")
        x.append((b[:, None, :] + s[:, None, :] * w).reshape(-1, b.shape[1]))
    return AdaptedProcess(topo, 0, x)


def _same_topology(a, b):
    if a.topology != b.topology:
        raise UsageError("problems live on different topologies")


def sde_stability_report(problem, problem_bar):
    """Both sides of the forward stability estimates.

    The right side is ``|eta - eta_bar|^2`` plus the squared drift and
    diffusion differences evaluated along the barred solution.
    """
    _same_topology(problem, problem_bar)
    topo = problem.topology
    x, xb = solve_sde(problem), solve_sde(problem_bar)
    lhs = sum(_sq(topo, x[k] - xb[k]) for k in x.times)
    rhs = float(np.sum((problem.eta - problem_bar.eta) ** 2))
    rhs_zero = float(np.sum(problem.eta ** 2))
    for k in range(topo.horizon):
        rhs += _sq(topo, problem.drift(k, xb[k]) - problem_bar.drift(k, xb[k]))
        rhs += _sq(topo, problem.diffusion(k, xb[k]) - problem_bar.diffusion(k, xb[k]))
        zero = np.zeros_like(xb[k])
        rhs_zero += _sq(topo, problem.drift(k, zero)) + _sq(topo, problem.diffusion(k, zero))
    lhs_zero = sum(_sq(topo, x[k]) for k in x.times)
    return EstimateRecord(float(lhs), float(rhs), float(lhs_zero), float(rhs_zero))
