"""Fully coupled FBS-Delta-E solver based on the method of continuation.

The solver targets the parameterised system

    x_{k+1} = b^a(k, theta_k) + psi_k + (sigma^a(k, theta_k) + gamma_k) w_k
    y_k     = -(f^a(k+1, theta_k) + phi_k)
    x_0     = Lambda^a(y_0) + xi
    y_N     = Phi^a(x_N) + eta

where ``^a`` denotes :func:`~fbsde_tree.coefficients.blend_alpha`.  At ``a = 0``
the system decouples and is solved directly.  A ladder ``0 = a_0 < ... < a_J``
is climbed by Picard iteration: the level-``j`` solution is the fixed point of
``z -> solve(a_{j-1}, tilde(a_j - a_{j-1}, data, z))``.  The step length is
chosen adaptively because the contraction constant is not computable a priori.
"""

from dataclasses import dataclass, field
import math
import time

import numpy as np

from .coefficients import CoefficientSet, blend_alpha
from .errors import ConvergenceError, ResourceError, ShapeError, UsageError
from .tree import AdaptedProcess, _sq, aggregate, cond_prev, expectation

__all__ = [
    "PerturbationData",
    "SolutionPair",
    "ContinuationOptions",
    "SolveDiagnostics",
    "ResidualRecord",
    "AprioriRecord",
    "solve_alpha0",
    "tilde_perturbation",
    "solve_fbsde",
    "residual",
    "with_offsets",
    "apriori_report",
]


def _as_levels(topology, value, n, start, stop, name):
    if value is None:
        return [np.zeros((topology.n_nodes(k), n)) for k in range(start, stop + 1)]
    if isinstance(value, AdaptedProcess):
        if value.start != start or value.stop != stop:
            raise ShapeError(f"{name} must cover times {start}..{stop}")
        return list(value.fields)
    return list(AdaptedProcess(topology, start, list(value)).fields)


@dataclass(frozen=True)
class PerturbationData:
    """Inhomogeneity ``(xi, eta, phi, psi, gamma)`` of the coupled system.

    ``xi`` is a vector, ``eta`` a level-``N`` field, and ``phi``, ``psi``,
    ``gamma`` are processes over ``k = 0..N-1``.
    """

    topology: object
    xi: np.ndarray
    eta: np.ndarray
    phi: AdaptedProcess
    psi: AdaptedProcess
    gamma: AdaptedProcess

    @classmethod
    def build(cls, topology, n, xi=None, eta=None, phi=None, psi=None, gamma=None):
        """Assemble from arrays or level lists; missing parts are zero."""
        N = topology.horizon
        xi = np.zeros(n) if xi is None else np.asarray(xi, dtype=float).reshape(-1)
        if xi.shape != (n,):
            raise ShapeError(f"xi must have shape ({n},)")
        eta = _as_levels(topology, None if eta is None else [eta], n, N, N, "eta")[0]
        procs = [AdaptedProcess(topology, 0, _as_levels(topology, v, n, 0, N - 1, name))
                 for v, name in ((phi, "phi"), (psi, "psi"), (gamma, "gamma"))]
        return cls(topology, xi, eta, *procs)

    @classmethod
    def zeros(cls, topology, n):
        return cls.build(topology, n)

    @classmethod
    def random(cls, topology, n, seed, scale=1.0):
        """Standard normal entries times ``scale``; deterministic in ``seed``."""
        rng = np.random.default_rng(seed)
        N = topology.horizon

        def proc():
            return [scale * rng.standard_normal((topology.n_nodes(k), n)) for k in range(N)]

        return cls.build(topology, n, scale * rng.standard_normal(n),
                         scale * rng.standard_normal((topology.n_nodes(N), n)),
                         proc(), proc(), proc())

    @property
    def dim(self):
        return self.xi.shape[0]

    def _raw(self):
        return _Pert(self.xi, self.eta, list(self.phi.fields), list(self.psi.fields),
                     list(self.gamma.fields))

    @classmethod
    def _wrap(cls, topology, raw):
        return cls.build(topology, raw.xi.shape[0], raw.xi, raw.eta, raw.phi, raw.psi, raw.gamma)

    def _combine(self, other, op):
        a, b = self._raw(), other._raw()
        return PerturbationData._wrap(self.topology, _Pert(
            op(a.xi, b.xi), op(a.eta, b.eta),
            *[[op(u, v) for u, v in zip(s, t)] for s, t in zip(a[2:], b[2:])]))

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def scale(self, s):
        a = self._raw()
        return PerturbationData._wrap(self.topology, _Pert(
            s * a.xi, s * a.eta, *[[s * u for u in seq] for seq in a[2:]]))

    def norm_sq(self):
        return aggregate(self, "H")


class _Pert:
    # Lightweight mutable-free tuple used inside the solver loops.
    __slots__ = ("xi", "eta", "phi", "psi", "gamma")

    def __init__(self, xi, eta, phi, psi, gamma):
        self.xi, self.eta, self.phi, self.psi, self.gamma = xi, eta, phi, psi, gamma

    def __getitem__(self, i):
        return (self.xi, self.eta, self.phi, self.psi, self.gamma)[i]


@dataclass(frozen=True)
class SolutionPair:
    """Forward and backward components ``x_0..x_N`` and ``y_0..y_N``."""

    x: AdaptedProcess
    y: AdaptedProcess

    def __post_init__(self):
        if self.x.topology != self.y.topology or self.x.dim != self.y.dim:
            raise ShapeError("x and y must share topology and dimension")
        N = self.x.topology.horizon
        if (self.x.start, self.x.stop, self.y.start, self.y.stop) != (0, N, 0, N):
            raise ShapeError("solution components must cover times 0..N")

    @classmethod
    def from_levels(cls, topology, xs, ys):
        return cls(AdaptedProcess(topology, 0, xs), AdaptedProcess(topology, 0, ys))

    @property
    def topology(self):
        return self.x.topology

    def norm_sq(self):
        """``E[sum |x_k|^2 + sum |y_k|^2]``."""
        return aggregate((self.x, self.y), "N2")

    def relative_distance(self, other):
        """N2 distance to ``other`` relative to the N2 norm of ``other``."""
        diff = aggregate((self.x - other.x, self.y - other.y), "N2")
        ref = other.norm_sq()
        return math.sqrt(diff / ref) if ref > 0 else math.sqrt(diff)


@dataclass(frozen=True)
class ContinuationOptions:
    """Controls of the continuation ladder.

    Attributes
    ----------
    tol : float
        Relative N2 change between Picard iterates that counts as converged
        (absolute floor 1e-12).
    max_iter : int
        Picard iteration budget per call at each ladder level.
    delta_init, delta_min : float
        First laddered step length and the smallest one tried; steps are
        halved in between.
    flat_first : bool
        Try a single step straight to the target before laddering.
    max_depth : int
        Largest admissible number of ladder levels.
    max_work : int
        Budget of Picard iterations, summed over all levels, for one
        attempted step length; the nesting makes the cost grow geometrically
        with the number of levels.
    inner_factor : float
        Inner levels are solved to ``inner_factor`` times the last relative
        change of the level above (never tighter than ``0.1 * tol``).
    """

    tol: float = 1e-10
    max_iter: int = 200
    delta_init: float = 0.5
    delta_min: float = 1.0 / 16
    flat_first: bool = True
    max_depth: int = 16
    max_work: int = 50_000
    inner_factor: float = 0.1

    def __post_init__(self):
        if not self.tol > 0:
            raise UsageError("tol must be positive")
        if not 0 < self.delta_min <= self.delta_init <= 1:
            raise UsageError("need 0 < delta_min <= delta_init <= 1")
        if self.max_iter < 1 or self.max_depth < 1 or self.max_work < 1:
            raise UsageError("iteration and depth budgets must be positive")
        if not 0 < self.inner_factor <= 1:
            raise UsageError("inner_factor must lie in (0, 1]")


@dataclass
class SolveDiagnostics:
    """Record of one continuation solve.

    ``iterations[j]`` totals the Picard iterations spent at ladder level ``j``
    over all calls, ``contraction[j]`` is the largest per-call geometric-mean
    ratio of successive iterate changes at that level (0 when a call
    converged in one step).  Level 0 is the direct decoupled solve.
    """

    alpha_grid: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    calls: list = field(default_factory=list)
    contraction: list = field(default_factory=list)
    residual: float = math.nan
    attempts: list = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0

    def as_dict(self, include_time=False):
        out = {
            "alpha_grid": list(self.alpha_grid),
            "picard_iterations": list(self.iterations),
            "calls": list(self.calls),
            "contraction": list(self.contraction),
            "residual": self.residual,
            "attempts": list(self.attempts),
            "converged": self.converged,
        }
        if include_time:
            out["wall_time"] = self.wall_time
        return out


class _Diverged(Exception):
    pass


# -- primitive sweeps on level lists -------------------------------------------

def _n2(topo, levels_a, levels_b=()):
    return sum(_sq(topo, f) for f in levels_a) + sum(_sq(topo, f) for f in levels_b)


def _alpha0(topo, dom, p):
    """Decoupled solve; returns level lists ``(xs, ys)``."""
    N = topo.horizon
    w = topo.w[None, :, None]
    xs, ys = [None] * (N + 1), [None] * (N + 1)

    def step(k, drift, diff):
        return (drift[:, None, :] + diff[:, None, :] * w).reshape(-1, drift.shape[1])

    if dom.mu > 0:
        ys[N] = p.eta
        for k in range(N):
            ys[k] = -p.phi[k]
        xs[0] = dom.core_initial(ys[0]) + p.xi[None, :]
        for k in range(N):
            yp, zp = cond_prev(ys[k + 1], topo)
            xs[k + 1] = step(k, dom.core_drift(k, yp, zp) + p.psi[k],
                             dom.core_diffusion(k, yp, zp) + p.gamma[k])
    else:
        xs[0] = p.xi[None, :]
        for k in range(N):
            xs[k + 1] = step(k, p.psi[k], p.gamma[k])
        ys[N] = dom.core_terminal(xs[N]) + p.eta
        for k in range(N):
            ys[k] = -dom.core_driver(k, xs[k]) - p.phi[k]
    return xs, ys


def _tilde(coeffs, dom, delta, p, xs, ys):
    N = coeffs.topology.horizon
    phi, psi, gamma = [], [], []
    for k in range(N):
        yp, zp = cond_prev(ys[k + 1], coeffs.topology)
        f, b, s = coeffs.gamma(k, xs[k], yp, zp)
        phi.append(p.phi[k] + delta * (f - dom.core_driver(k, xs[k])))
        psi.append(p.psi[k] + delta * (b - dom.core_drift(k, yp, zp)))
        gamma.append(p.gamma[k] + delta * (s - dom.core_diffusion(k, yp, zp)))
    eta = p.eta + delta * (coeffs.terminal(xs[N]) - dom.core_terminal(xs[N]))
    y0 = ys[0][0]
    xi = p.xi + delta * (coeffs.initial(y0) - dom.core_initial(y0))
    return _Pert(xi, eta, phi, psi, gamma)


def _check_dims(coeffs, p):
    if p.topology != coeffs.topology or p.dim != coeffs.dim:
        raise ShapeError("perturbation does not match the coefficient set")


def solve_alpha0(coeffs, domination, perturbation=None):
    """Solve the decoupled system at ``alpha = 0``.

    Case 1 (``mu > 0``) sweeps the backward equation first; Case 2 sweeps
    the forward equation first.  ``coeffs`` only supplies the topology and
    dimension because the decoupled system uses the domination data alone.
    """
    topo = coeffs.topology
    p = perturbation if perturbation is not None else PerturbationData.zeros(topo, coeffs.dim)
    _check_dims(coeffs, p)
    xs, ys = _alpha0(topo, domination, p._raw())
    return SolutionPair.from_levels(topo, xs, ys)


def tilde_perturbation(coeffs, domination, delta, perturbation, guess):
    """Perturbation seen by the lower ladder level during one Picard step.

    Adds ``delta`` times the gap between the coefficients and the decoupled
    core, evaluated along ``guess``, to ``perturbation``.
    """
    _check_dims(coeffs, perturbation)
    if guess.topology != coeffs.topology or guess.x.dim != coeffs.dim:
        raise ShapeError("guess does not match the coefficient set")
    if delta == 0:
        return perturbation
    raw = _tilde(coeffs, domination, float(delta), perturbation._raw(),
                 list(guess.x.fields), list(guess.y.fields))
    return PerturbationData._wrap(coeffs.topology, raw)


# -- residual ------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualRecord:
    """Largest Euclidean node defect of each equation and their maximum."""

    forward: float
    backward: float
    initial: float
    terminal: float

    @property
    def overall(self):
        return max(self.forward, self.backward, self.initial, self.terminal)

    def as_dict(self):
        return {"forward": self.forward, "backward": self.backward, "initial": self.initial,
                "terminal": self.terminal, "overall": self.overall}


def _residual_levels(coeffs, p, xs, ys):
    topo = coeffs.topology
    N, n = topo.horizon, coeffs.dim
    w = topo.w[None, :, None]
    fwd = bwd = 0.0
    for k in range(N):
        yp, zp = cond_prev(ys[k + 1], topo)
        f, b, s = coeffs.gamma(k, xs[k], yp, zp)
        pred = ((b + p.psi[k])[:, None, :] + (s + p.gamma[k])[:, None, :] * w).reshape(-1, n)
        fwd = max(fwd, float(np.max(np.linalg.norm(xs[k + 1] - pred, axis=1))))
        bwd = max(bwd, float(np.max(np.linalg.norm(ys[k] + f + p.phi[k], axis=1))))
    init = float(np.linalg.norm(xs[0][0] - coeffs.initial(ys[0][0]) - p.xi))
    term = float(np.max(np.linalg.norm(ys[N] - coeffs.terminal(xs[N]) - p.eta, axis=1)))
    return ResidualRecord(fwd, bwd, init, term)


def residual(coeffs, perturbation, candidate):
    """Node-wise defects of ``candidate`` in the system defined by ``coeffs``.

    Pass ``blend_alpha(coeffs, domination, alpha)`` to measure an
    intermediate ladder level.
    """
    p = perturbation if perturbation is not None else PerturbationData.zeros(
        coeffs.topology, coeffs.dim)
    _check_dims(coeffs, p)
    if candidate.topology != coeffs.topology:
        raise ShapeError("candidate lives on another topology")
    return _residual_levels(coeffs, p._raw(), list(candidate.x.fields),
                            list(candidate.y.fields))


# -- continuation ladder -------------------------------------------------------

class _Ladder:

    def __init__(self, coeffs, dom, grid, opts, diag):
        self.coeffs, self.dom, self.grid, self.opts, self.diag = coeffs, dom, grid, opts, diag
        self.topo = coeffs.topology
        self.work = 0

    def solve(self, j, p, warm, tol, top=False, target=None):
        if j == 0:
            self.diag.calls[0] += 1
            return _alpha0(self.topo, self.dom, p)
        opts, topo = self.opts, self.topo
        delta = self.grid[j] - self.grid[j - 1]
        xs, ys = warm if warm is not None else self.solve(j - 1, p, None, tol)
        self.diag.calls[j] += 1
        first = prev_rel = None
        history = []
        for it in range(1, opts.max_iter + 1):
            q = _tilde(self.coeffs, self.dom, delta, p, xs, ys)
            inner = max(0.1 * opts.tol, min(1e-3, opts.inner_factor * (prev_rel or 1e-2)))
            nxs, nys = self.solve(j - 1, q, (xs, ys), inner)
            d = math.sqrt(_n2(topo, [a - b for a, b in zip(nxs, xs)],
                              [a - b for a, b in zip(nys, ys)]))
            s = math.sqrt(_n2(topo, nxs, nys))
            self.diag.iterations[j] += 1
            self.work += 1
            if self.work > opts.max_work:
                raise _Diverged(f"work budget of {opts.max_work} Picard iterations exhausted")
            if not (math.isfinite(d) and math.isfinite(s)):
                raise _Diverged(f"non-finite iterate at level {j}")
            history.append(d)
            first = first if first is not None else d
            threshold = max(tol * s, 1e-12)
            if d > 1e3 * max(first, threshold):
                raise _Diverged(f"iterates grow at level {j} (change {d:.3e})")
            if len(history) > 6 and d > 10 * threshold and d >= history[-6]:
                raise _Diverged(f"no contraction at level {j} after {it} iterations")
            xs, ys = nxs, nys
            prev_rel = d / s if s > 0 else d
            if d <= threshold:
                if top:
                    res = _residual_levels(target, p, xs, ys).overall
                    self.diag.residual = res
                    if res > 10 * opts.tol * (1 + s):
                        continue
                break
        else:
            raise _Diverged(f"no convergence at level {j} within {opts.max_iter} iterations")
        factor = 0.0
        if len(history) > 1 and history[0] > 0:
            factor = (history[-1] / history[0]) ** (1.0 / (len(history) - 1))
        self.diag.contraction[j] = max(self.diag.contraction[j], factor)
        return xs, ys


def _grid(alpha, delta):
    levels = max(1, math.ceil(alpha / delta - 1e-12))
    return [min(alpha, i * delta) for i in range(levels + 1)]


def solve_fbsde(coeffs, domination, perturbation=None, alpha_target=1.0, options=None,
                warm_start=None):
    """Solve the system at ``alpha_target`` by adaptive continuation.

    Parameters
    ----------
    coeffs : CoefficientSet
        The coefficients at ``alpha = 1``; they should satisfy the domination
        and monotonicity conditions in the standard orientation.
    domination : DominationData
    perturbation : PerturbationData, optional
    alpha_target : float
    options : ContinuationOptions, optional
    warm_start : SolutionPair, optional
        Initial Picard guess at the top level (default: the decoupled solve).

    Returns
    -------
    (SolutionPair, SolveDiagnostics)

    Raises
    ------
    ConvergenceError
        When no step down to ``delta_min`` contracts.
    ResourceError
        When the required number of ladder levels exceeds ``max_depth``.
    """
    opts = options or ContinuationOptions()
    alpha_target = float(alpha_target)
    if not 0 <= alpha_target <= 1:
        raise UsageError("alpha_target must lie in [0, 1]")
    topo = coeffs.topology
    p = perturbation if perturbation is not None else PerturbationData.zeros(topo, coeffs.dim)
    _check_dims(coeffs, p)
    raw = p._raw()
    clock = time.perf_counter()
    diag = SolveDiagnostics()
    if alpha_target == 0:
        xs, ys = _alpha0(topo, domination, raw)
        diag.alpha_grid, diag.iterations, diag.calls, diag.contraction = [0.0], [0], [1], [0.0]
        diag.residual = _residual_levels(blend_alpha(coeffs, domination, 0.0), raw, xs, ys).overall
        diag.converged = True
        diag.wall_time = time.perf_counter() - clock
        return SolutionPair.from_levels(topo, xs, ys), diag

    deltas = []
    if opts.flat_first:
        deltas.append(alpha_target)
    d = opts.delta_init
    while d >= opts.delta_min * (1 - 1e-12):
        if d < alpha_target and all(abs(d - e) > 1e-15 for e in deltas):
            deltas.append(d)
        d /= 2
    if not deltas:
        deltas.append(alpha_target)
    target = blend_alpha(coeffs, domination, alpha_target)
    warm = None
    if warm_start is not None:
        if warm_start.topology != topo or warm_start.x.dim != coeffs.dim:
            raise ShapeError("warm start does not match the coefficient set")
        warm = (list(warm_start.x.fields), list(warm_start.y.fields))

    for delta in deltas:
        grid = _grid(alpha_target, delta)
        levels = len(grid) - 1
        if levels > opts.max_depth:
            diag.attempts.append({"delta": delta, "levels": levels, "status": "too deep"})
            diag.wall_time = time.perf_counter() - clock
            raise ResourceError(
                f"step {delta:g} needs {levels} ladder levels, budget is {opts.max_depth}",
                diagnostics=diag)
        diag.alpha_grid = grid
        diag.iterations = [0] * (levels + 1)
        diag.calls = [0] * (levels + 1)
        diag.contraction = [0.0] * (levels + 1)
        diag.residual = math.nan
        ladder = _Ladder(coeffs, domination, grid, opts, diag)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                xs, ys = ladder.solve(levels, raw, warm, opts.tol, top=True, target=target)
        except _Diverged as exc:
            diag.attempts.append({"delta": delta, "levels": levels, "status": "failed",
                                  "reason": str(exc),
                                  "picard_iterations": list(diag.iterations)})
            continue
        diag.attempts.append({"delta": delta, "levels": levels, "status": "accepted"})
        diag.converged = True
        diag.wall_time = time.perf_counter() - clock
        return SolutionPair.from_levels(topo, xs, ys), diag
    diag.wall_time = time.perf_counter() - clock
    raise ConvergenceError(
        f"no contracting step down to delta_min={opts.delta_min:g}; "
        f"tried {[a['delta'] for a in diag.attempts]}", diagnostics=diag)


# -- estimates -----------------------------------------------------------------

def with_offsets(coeffs, perturbation):
    """Coefficient set with the perturbation folded into its maps."""
    c, p = coeffs, perturbation
    _check_dims(c, p)
    raw = p._raw()
    return CoefficientSet(
        c.topology, c.dim,
        lambda y: c.initial(y) + raw.xi,
        lambda x: c.terminal(x) + raw.eta,
        lambda k, x, yp, zp: c.drift(k, x, yp, zp) + raw.psi[k],
        lambda k, x, yp, zp: c.diffusion(k, x, yp, zp) + raw.gamma[k],
        lambda k, x, yp, zp: c.driver(k, x, yp, zp) + raw.phi[k],
        f"{c.label}+offsets")


@dataclass(frozen=True)
class AprioriRecord:
    """Measured sides of the a priori estimates and the duality checks.

    ``lhs`` is ``E[sum |x_k - xb_k|^2 + sum |y_k - yb_k|^2]``.  ``i_hat`` is the
    squared coefficient gap along the barred solution and ``j_hat`` the
    squared norm of the perturbation gap.  ``telescoping_defect`` compares
    ``E<dx_N, dy_N> - E<dx_0, dy_0>`` with the sum of one-step increments,
    ``expanded_defect`` compares the same quantity with its expression
    through the equations.  ``monotone_left`` / ``monotone_right`` are the two
    sides of the inequality that the monotonicity condition yields for two
    solutions of the same system; they are ``None`` when the coefficient sets
    differ.
    """

    lhs: float
    i_hat: float
    j_hat: float
    telescoping_defect: float
    expanded_defect: float
    monotone_left: object = None
    monotone_right: object = None

    @property
    def ratio_i(self):
        if self.i_hat > 0:
            return self.lhs / self.i_hat
        return 0.0 if self.lhs == 0 else math.inf

    @property
    def ratio_j(self):
        if self.j_hat > 0:
            return self.lhs / self.j_hat
        return 0.0 if self.lhs == 0 else math.inf

    @property
    def monotone_slack(self):
        if self.monotone_left is None:
            return None
        return self.monotone_right - self.monotone_left

    def as_dict(self):
        return {"lhs": self.lhs, "i_hat": self.i_hat, "j_hat": self.j_hat,
                "ratio_i": self.ratio_i, "ratio_j": self.ratio_j,
                "telescoping_defect": self.telescoping_defect,
                "expanded_defect": self.expanded_defect,
                "monotone_left": self.monotone_left, "monotone_right": self.monotone_right,
                "monotone_slack": self.monotone_slack}


def _inner(topo, a, b):
    return float(expectation(topo, np.sum(a * b, axis=-1)))


def apriori_report(coeffs, domination, solution, solution_bar, coeffs_bar=None,
                   perturbation=None, perturbation_bar=None):
    """Evaluate both sides of the a priori estimates for two solved systems.

    ``solution`` solves ``(coeffs, perturbation)`` and ``solution_bar`` solves
    ``(coeffs_bar, perturbation_bar)``; ``coeffs_bar`` defaults to ``coeffs``.
    """
    topo = coeffs.topology
    if solution.topology != topo or solution_bar.topology != topo:
        raise UsageError("solutions and coefficients live on different topologies")
    same = coeffs_bar is None or coeffs_bar is coeffs
    cb = coeffs if coeffs_bar is None else coeffs_bar
    if cb.topology != topo:
        raise UsageError("coefficient sets live on different topologies")
    zero = PerturbationData.zeros(topo, coeffs.dim)
    p = perturbation if perturbation is not None else zero
    pb = perturbation_bar if perturbation_bar is not None else zero
    full, full_bar = with_offsets(coeffs, p), with_offsets(cb, pb)
    N = topo.horizon
    x, y = list(solution.x.fields), list(solution.y.fields)
    xb, yb = list(solution_bar.x.fields), list(solution_bar.y.fields)
    dx = [a - b for a, b in zip(x, xb)]
    dy = [a - b for a, b in zip(y, yb)]
    lhs = _n2(topo, dx, dy)

    # coefficient gap along the barred solution
    i_hat = float(np.sum((full.initial(yb[0][0]) - full_bar.initial(yb[0][0])) ** 2))
    i_hat += _sq(topo, full.terminal(xb[N]) - full_bar.terminal(xb[N]))
    dp = (p - pb)._raw()
    j_hat = aggregate(p - pb, "H")

    pairing = [_inner(topo, dx[k], dy[k]) for k in range(N + 1)]
    telescoping = abs((pairing[N] - pairing[0])
                      - sum(pairing[k + 1] - pairing[k] for k in range(N)))
    expanded = 0.0
    left = v_part = mu_part = right = 0.0
    for k in range(N):
        ypb, zpb = cond_prev(yb[k + 1], topo)
        yp, zp = cond_prev(y[k + 1], topo)
        g = full.gamma(k, x[k], yp, zp)
        g_bar_self = full.gamma(k, xb[k], ypb, zpb)
        g_bar = full_bar.gamma(k, xb[k], ypb, zpb)
        i_hat += sum(_sq(topo, a - b) for a, b in zip(g_bar_self, g_bar))
        dyp, dzp = yp - ypb, zp - zpb
        f_hat, b_hat, s_hat = (a - b for a, b in zip(g, g_bar))
        expanded += (_inner(topo, b_hat, dyp) + _inner(topo, s_hat, dzp)
                     + _inner(topo, dx[k], f_hat))
        if same:
            P = np.einsum("vij,vj->vi", domination.A[k], dx[k])
            Q = domination.q_map(k, dyp, dzp)
            v_part += _inner(topo, P, P)
            mu_part += _inner(topo, Q, Q)
            right += (_inner(topo, dp.psi[k], dyp) + _inner(topo, dp.gamma[k], dzp)
                      + _inner(topo, dx[k], dp.phi[k]))
    expanded = abs((pairing[N] - pairing[0]) - expanded)
    mono_left = mono_right = None
    if same:
        G = domination.G
        gx = np.einsum("vij,vj->vi", G, dx[N])
        my = domination.M @ dy[0][0]
        left = (domination.v * (_inner(topo, gx, gx) + v_part)
                + domination.mu * (float(my @ my) + mu_part))
        right += -_inner(topo, dp.eta, dx[N]) + float(dp.xi @ dy[0][0])
        mono_left, mono_right = float(left), float(right)
    return AprioriRecord(float(lhs), float(i_hat), float(j_hat), float(telescoping),
                         float(expanded), mono_left, mono_right)
