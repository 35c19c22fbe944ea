"""Linear-quadratic control on the scenario tree.

Two problems are covered.  In the forward problem a controlled linear
recursion starts from a free initial state and a quadratic criterion in the
state, initial state and control is minimised.  In the backward problem the
control enters a linear backward recursion with a fixed terminal value.  In
both cases the optimality system is a coupled forward-backward system that
satisfies the domination-monotonicity conditions.  It is solved with the
continuation method and cross-checked against a direct minimisation of the
criterion over the stacked node values of the control.

Decision vectors of the oracles are stacked in level-major node order:
``(xi, u_0(root), u_1(node 0), u_1(node 1), ..., u_{N-1}(last node))``.
"""

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .bsde import BsdeProblem, solve_bsde
from .coefficients import CoefficientSet, DominationData, _lift, check_conditions, node_blocks
from .continuation import ContinuationOptions, solve_fbsde
from .direct import solve_linear_direct
from .errors import ConvexityError, ShapeError, UsageError, VerificationError
from .sde import SdeProblem, solve_sde
from .tree import AdaptedProcess, TreeTopology, cond_prev, expectation

__all__ = [
    "ForwardLqData",
    "BackwardLqData",
    "HamiltonianSystem",
    "FlqSolution",
    "BlqSolution",
    "OracleResult",
    "assemble_flq",
    "solve_flq",
    "cost_flq",
    "oracle_flq",
    "flq_gap_identity",
    "assemble_blq",
    "solve_blq",
    "cost_blq",
    "oracle_blq",
    "random_flq",
    "random_blq",
    "insurance_demo",
    "insurance_residual",
    "insurance_liability_by_paths",
]


def _mv(mats, vecs):
    return np.einsum("vij,...vj->...vi", mats, vecs)


def _mtv(mats, vecs):
    return np.einsum("vji,...vj->...vi", mats, vecs)


def _sym_power(mat, power):
    vals, vecs = np.linalg.eigh(mat)
    return (vecs * vals ** power) @ vecs.T


def _check_sym(name, mats, floor, strict):
    mats = np.asarray(mats)
    scale = max(1.0, float(np.max(np.abs(mats))))
    if np.max(np.abs(mats - np.swapaxes(mats, -1, -2))) > 1e-12 * scale:
        raise UsageError(f"{name} must be symmetric")
    low = float(np.min(np.linalg.eigvalsh(mats)))
    if low < floor - 1e-12 * scale or (strict and low <= 0):
        raise UsageError(f"{name} has smallest eigenvalue {low:.3e}, needs at least {floor:g}")
    return low


def _control_levels(topology, u, m, name):
    N = topology.horizon
    if isinstance(u, AdaptedProcess):
        fields = list(u.fields)
        if u.start != 0 or u.stop != N - 1:
            raise ShapeError(f"{name} must cover times 0..{N - 1}")
    else:
        fields = list(AdaptedProcess(topology, 0, list(u)).fields)
    if fields[0].shape[1] != m:
        raise ShapeError(f"{name} must take values in R^{m}")
    return fields


@dataclass(frozen=True)
class HamiltonianSystem:
    """Assembled coupled system; unpacks as ``(coefficients, domination)``."""

    coefficients: CoefficientSet
    domination: DominationData
    report: object

    def __iter__(self):
        return iter((self.coefficients, self.domination))


@dataclass(frozen=True)
class OracleResult:
    """Minimiser of a convex quadratic criterion over stacked controls.

    Unpacks as ``(xi, control, cost)`` for the forward problem and as
    ``(control, cost)`` for the backward one.
    """

    xi: object
    control: AdaptedProcess
    cost: float
    gradient_norm: float
    decision: np.ndarray

    def __iter__(self):
        if self.xi is None:
            return iter((self.control, self.cost))
        return iter((self.xi, self.control, self.cost))


# -- forward problem -----------------------------------------------------------

@dataclass(frozen=True)
class ForwardLqData:
    """Data of the forward problem.

    Time-indexed quantities are lists over ``k = 0..N-1`` of node arrays:
    ``A``, ``C`` of shape ``(q**k, n, n)``, ``B``, ``D`` of shape
    ``(q**k, n, m)``, ``b``, ``sigma`` of shape ``(q**k, n)``, ``Q`` of shape
    ``(q**k, n, n)`` and ``R`` of shape ``(q**k, m, m)``.  ``M`` is ``(n, n)``
    and ``G`` is ``(q**N, n, n)``.  ``delta`` is the recorded lower bound of
    the spectrum of ``R``.
    """

    topology: TreeTopology
    A: tuple
    B: tuple
    C: tuple
    D: tuple
    b: tuple
    sigma: tuple
    M: np.ndarray
    G: np.ndarray
    Q: tuple
    R: tuple
    delta: float

    @property
    def n(self):
        return self.M.shape[0]

    @property
    def m(self):
        return self.R[0].shape[-1]

    @classmethod
    def build(cls, topology, n, m, *, A=None, B=None, C=None, D=None, b=None, sigma=None,
              M=None, G=None, Q=None, R=None, delta=None):
        """Broadcast constants (or per-time lists) onto the tree and validate.

        Missing matrices default to zero, except ``M`` and ``R`` which
        default to identities.
        """
        N = topology.horizon
        steps = range(N)
        lv = lambda value, shape: tuple(node_blocks(topology, value, shape, steps))
        M = np.eye(n) if M is None else np.asarray(_lift(M, (n, n)), dtype=float)
        Rl = lv(np.eye(m) if R is None else R, (m, m))
        G = node_blocks(topology, G, (n, n), [N])[0]
        data = cls(topology, lv(A, (n, n)), lv(B, (n, m)), lv(C, (n, n)), lv(D, (n, m)),
                   lv(b, (n,)), lv(sigma, (n,)), M, G, lv(Q, (n, n)), Rl, 0.0)
        floor = data._validate(delta)
        return cls(**{**data.__dict__, "delta": floor})

    def _validate(self, delta):
        if self.M.shape != (self.n, self.n):
            raise ShapeError("M must be square")
        arrays = [self.M, self.G, *self.A, *self.B, *self.C, *self.D, *self.b, *self.sigma,
                  *self.Q, *self.R]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise UsageError("forward LQ data must be finite")
        _check_sym("M", self.M, 0.0, strict=True)
        _check_sym("G", self.G, 0.0, strict=False)
        for k in range(self.topology.horizon):
            _check_sym(f"Q[{k}]", self.Q[k], 0.0, strict=False)
        low = min(_check_sym(f"R[{k}]", self.R[k], 0.0, strict=True)
                  for k in range(self.topology.horizon))
        if delta is not None:
            if not 0 < delta <= low + 1e-12:
                raise UsageError(f"R does not dominate delta={delta:g} (smallest eigenvalue "
                                 f"{low:.3e})")
            return float(delta)
        return low


class _FlqMaps:

    def __init__(self, data):
        self.d = data
        self.Rinv = [np.linalg.inv(R) for R in data.R]
        self.Minv = np.linalg.inv(data.M)

    def control(self, k, yp, zp):
        d = self.d
        return -_mv(self.Rinv[k], _mtv(d.B[k], yp) + _mtv(d.D[k], zp))

    def initial(self, y):
        return np.einsum("ij,...j->...i", -self.Minv, y)

    def terminal(self, x):
        return _mv(self.d.G, x)

    def drift(self, k, x, yp, zp):
        d = self.d
        return _mv(d.A[k], x) + _mv(d.B[k], self.control(k, yp, zp)) + d.b[k]

    def diffusion(self, k, x, yp, zp):
        d = self.d
        return _mv(d.C[k], x) + _mv(d.D[k], self.control(k, yp, zp)) + d.sigma[k]

    def driver(self, k, x, yp, zp):
        d = self.d
        return -(_mtv(d.A[k], yp) + _mtv(d.C[k], zp) + _mv(d.Q[k], x))


def _bound(*norms):
    return max(max(norms), 1e-12) * (1 + 1e-9)


def assemble_flq(data, verify_samples=10_000, seed=0):
    """Optimality system of the forward problem with the control eliminated.

    The domination data use ``mu = 1``, ``M_dom = M^{-1/2}``,
    ``B_dom = R^{-1/2} B^T`` and ``C_dom = R^{-1/2} D^T``, for which the
    monotonicity pairing equals ``-<Q dx, dx> - <R du, du>``.

    Returns
    -------
    HamiltonianSystem
        Unpacks as ``(coefficients, domination)``; ``report`` holds the
        sampled condition check (``None`` when ``verify_samples`` is 0).
    """
    maps = _FlqMaps(data)
    topo, n = data.topology, data.n
    coeffs = CoefficientSet(topo, n, maps.initial, maps.terminal, maps.drift, maps.diffusion,
                            maps.driver, "forward LQ optimality system")
    r_half = [np.stack([_sym_power(R, -0.5) for R in Rk]) for Rk in data.R]
    B_dom = tuple(np.einsum("vij,vkj->vik", rh, Bk) for rh, Bk in zip(r_half, data.B))
    C_dom = tuple(np.einsum("vij,vkj->vik", rh, Dk) for rh, Dk in zip(r_half, data.D))
    m = data.m
    A_dom = tuple(np.zeros((topo.n_nodes(k), m, n)) for k in range(topo.horizon))
    m_half = _sym_power(maps.Minv, 0.5)
    K = _bound(np.linalg.norm(m_half, 2),
               *[np.linalg.norm(np.einsum("vij,vjk->vik", Bk, rh), 2, axis=(1, 2)).max()
                 for Bk, rh in zip(data.B, r_half)],
               *[np.linalg.norm(np.einsum("vij,vjk->vik", Dk, rh), 2, axis=(1, 2)).max()
                 for Dk, rh in zip(data.D, r_half)])
    dom = DominationData(topo, 1.0, 0.0, m_half, np.zeros((topo.n_nodes(topo.horizon), n, n)),
                         A_dom, B_dom, C_dom, bound=K)
    report = check_conditions(coeffs, dom, verify_samples, seed=seed) if verify_samples else None
    if report is not None and not report.passed:
        raise VerificationError(f"forward LQ system failed its condition check: "
                                f"{report.violations}")
    return HamiltonianSystem(coeffs, dom, report)


@dataclass(frozen=True)
class FlqSolution:
    """Optimal initial state, control, state, adjoint and cost.

    Unpacks as ``(xi, u, x, y, cost)``.  ``stationarity`` is the largest node
    norm of ``B^T y' + D^T z' + R u`` and ``oracle_gap`` the relative N2
    distance between the continuation and the stacked linear solutions.
    """

    xi: np.ndarray
    u: AdaptedProcess
    x: AdaptedProcess
    y: AdaptedProcess
    cost: float
    stationarity: float
    oracle_gap: float
    diagnostics: object

    def __iter__(self):
        return iter((self.xi, self.u, self.x, self.y, self.cost))


def _default_options(options):
    return options or ContinuationOptions(tol=1e-12)


def solve_flq(data, options=None, verify_samples=2000):
    """Solve the forward problem through its optimality system.

    Raises
    ------
    ConvergenceError
        Propagated from the continuation solver.
    VerificationError
        If the continuation and stacked linear solutions disagree beyond 1e-8.
    """
    system = assemble_flq(data, verify_samples)
    coeffs, dom = system
    sol, diag = solve_fbsde(coeffs, dom, None, 1.0, _default_options(options))
    ref = solve_linear_direct(coeffs)
    gap = sol.relative_distance(ref)
    if gap > 1e-8:
        raise VerificationError(f"continuation and direct solutions differ by {gap:.3e}")
    maps = _FlqMaps(data)
    topo = data.topology
    xi = -maps.Minv @ sol.y[0][0]
    u, stat = [], 0.0
    for k in range(topo.horizon):
        yp, zp = cond_prev(sol.y[k + 1], topo)
        uk = maps.control(k, yp, zp)
        u.append(uk)
        defect = _mtv(data.B[k], yp) + _mtv(data.D[k], zp) + _mv(data.R[k], uk)
        stat = max(stat, float(np.max(np.linalg.norm(defect, axis=1))))
    control = AdaptedProcess(topo, 0, u)
    return FlqSolution(xi, control, sol.x, sol.y, cost_flq(data, xi, control), stat, gap, diag)


def _flq_state(data, xi, u):
    return solve_sde(SdeProblem(
        data.topology, xi,
        lambda k, x: _mv(data.A[k], x) + _mv(data.B[k], u[k]) + data.b[k],
        lambda k, x: _mv(data.C[k], x) + _mv(data.D[k], u[k]) + data.sigma[k]))


def _quad(topo, mats, vecs):
    return float(expectation(topo, np.sum(_mv(mats, vecs) * vecs, axis=-1)))


def cost_flq(data, xi, u):
    """Criterion of the forward problem for initial state ``xi`` and control ``u``."""
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if xi.shape != (data.n,):
        raise ShapeError(f"initial state must have shape ({data.n},)")
    u = _control_levels(data.topology, u, data.m, "control")
    topo, N = data.topology, data.topology.horizon
    x = _flq_state(data, xi, u)
    total = float(xi @ data.M @ xi) + _quad(topo, data.G, x[N])
    for k in range(N):
        total += _quad(topo, data.Q[k], x[k]) + _quad(topo, data.R[k], u[k])
    return 0.5 * total


def flq_gap_identity(data, solution, xi, u):
    """``J(xi, u) - J(optimum)`` computed directly and as a quadratic form.

    Returns
    -------
    (float, float)
        The direct difference and the quadratic form in the deviations;
        they agree when the first-order cross term vanishes.
    """
    u = _control_levels(data.topology, u, data.m, "control")
    topo, N = data.topology, data.topology.horizon
    direct = cost_flq(data, xi, u) - solution.cost
    dxi = np.asarray(xi, dtype=float) - solution.xi
    x = _flq_state(data, np.asarray(xi, dtype=float), u)
    dx = [x[k] - solution.x[k] for k in range(N + 1)]
    form = float(dxi @ data.M @ dxi) + _quad(topo, data.G, dx[N])
    for k in range(N):
        du = u[k] - solution.u[k]
        form += _quad(topo, data.Q[k], dx[k]) + _quad(topo, data.R[k], du)
    return direct, 0.5 * form


def _offsets(topo, m):
    counts = [topo.n_nodes(k) for k in range(topo.horizon)]
    return np.concatenate([[0], np.cumsum(counts)]) * m


def _solve_normal(H, g):
    try:
        factor = cho_factor(H)
    except LinAlgError:
        raise ConvexityError("normal equations are not positive definite",
                             condition=float(np.linalg.cond(H))) from None
    d = cho_solve(factor, -g)
    return d, float(np.linalg.norm(H @ d + g))


def oracle_flq(data):
    """Minimise the forward criterion as a quadratic in the stacked decisions.

    The state is propagated as an affine map of the decision vector, the
    Hessian and gradient are assembled with exact node weights, and the
    normal equations are solved by Cholesky factorisation.

    Raises
    ------
    ConvexityError
        If the Hessian is not positive definite.
    """
    topo, n, m = data.topology, data.n, data.m
    N, q = topo.horizon, topo.q
    offs = n + _offsets(topo, m)
    size = int(offs[-1])
    H = np.zeros((size, size))
    g = np.zeros(size)
    S = np.zeros((1, n, size))
    S[0, :, :n] = np.eye(n)
    s = np.zeros((1, n))
    H[:n, :n] += data.M
    for k in range(N):
        nodes = topo.n_nodes(k)
        probs = topo.node_probabilities(k)
        U = np.zeros((nodes, m, size))
        for v in range(nodes):
            U[v, :, offs[k] + v * m: offs[k] + (v + 1) * m] = np.eye(m)
        QS = np.einsum("vij,vjd->vid", data.Q[k], S)
        H += np.einsum("v,vie,vid->ed", probs, S, QS)
        g += np.einsum("v,vie,vi->e", probs, QS, s)
        H += np.einsum("v,vie,vij,vjd->ed", probs, U, data.R[k], U)
        newS, news = [], []
        for j, w in enumerate(topo.w):
            F = data.A[k] + w * data.C[k]
            E = data.B[k] + w * data.D[k]
            newS.append(np.einsum("vij,vjd->vid", F, S) + np.einsum("vij,vjd->vid", E, U))
            news.append(_mv(F, s) + data.b[k] + w * data.sigma[k])
        S = np.stack(newS, axis=1).reshape(nodes * q, n, size)
        s = np.stack(news, axis=1).reshape(nodes * q, n)
    probs = topo.node_probabilities(N)
    GS = np.einsum("vij,vjd->vid", data.G, S)
    H += np.einsum("v,vie,vid->ed", probs, S, GS)
    g += np.einsum("v,vie,vi->e", probs, GS, s)
    H = 0.5 * (H + H.T)
    d, grad = _solve_normal(H, g)
    xi = d[:n]
    u = AdaptedProcess(topo, 0, [d[offs[k]:offs[k + 1]].reshape(-1, m) for k in range(N)])
    return OracleResult(xi, u, cost_flq(data, xi, u), grad, d)


# -- backward problem ----------------------------------------------------------

@dataclass(frozen=True)
class BackwardLqData:
    """Data of the backward problem.

    ``A``, ``B``, ``Q``, ``L`` are lists of ``(q**k, n, n)`` node arrays, ``C``
    of ``(q**k, n, m)``, ``alpha`` of ``(q**k, n)`` and ``R`` of
    ``(q**k, m, m)``.  ``eta`` is the ``(q**N, n)`` terminal value and ``M`` an
    ``(n, n)`` positive definite matrix.
    """

    topology: TreeTopology
    A: tuple
    B: tuple
    C: tuple
    alpha: tuple
    eta: np.ndarray
    M: np.ndarray
    Q: tuple
    L: tuple
    R: tuple
    delta: float

    @property
    def n(self):
        return self.M.shape[0]

    @property
    def m(self):
        return self.R[0].shape[-1]

    @classmethod
    def build(cls, topology, n, m, *, A=None, B=None, C=None, alpha=None, eta=None, M=None,
              Q=None, L=None, R=None, delta=None):
        """Broadcast constants (or per-time lists) onto the tree and validate."""
        N = topology.horizon
        steps = range(N)
        lv = lambda value, shape: tuple(node_blocks(topology, value, shape, steps))
        M = np.eye(n) if M is None else np.asarray(_lift(M, (n, n)), dtype=float)
        eta = node_blocks(topology, eta, (n,), [N])[0]
        data = cls(topology, lv(A, (n, n)), lv(B, (n, n)), lv(C, (n, m)), lv(alpha, (n,)), eta,
                   M, lv(Q, (n, n)), lv(L, (n, n)), lv(np.eye(m) if R is None else R, (m, m)),
                   0.0)
        floor = data._validate(delta)
        return cls(**{**data.__dict__, "delta": floor})

    def _validate(self, delta):
        if self.M.shape != (self.n, self.n):
            raise ShapeError("M must be square")
        arrays = [self.M, self.eta, *self.A, *self.B, *self.C, *self.alpha, *self.Q, *self.L,
                  *self.R]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise UsageError("backward LQ data must be finite")
        _check_sym("M", self.M, 0.0, strict=True)
        for k in range(self.topology.horizon):
            _check_sym(f"Q[{k}]", self.Q[k], 0.0, strict=False)
            _check_sym(f"L[{k}]", self.L[k], 0.0, strict=False)
        low = min(_check_sym(f"R[{k}]", self.R[k], 0.0, strict=True)
                  for k in range(self.topology.horizon))
        if delta is not None:
            if not 0 < delta <= low + 1e-12:
                raise UsageError(f"R does not dominate delta={delta:g}")
            return float(delta)
        return low


class _BlqMaps:

    def __init__(self, data):
        self.d = data
        self.gain = [np.einsum("vij,vjk,vlk->vil", C, np.linalg.inv(R), C)
                     for C, R in zip(data.C, data.R)]

    def initial(self, y):
        return np.einsum("ij,...j->...i", -self.d.M, y)

    def terminal(self, x):
        return np.broadcast_to(self.d.eta, np.shape(x)).copy()

    def drift(self, k, x, yp, zp):
        return _mtv(self.d.A[k], x) - _mv(self.d.Q[k], yp)

    def diffusion(self, k, x, yp, zp):
        return _mtv(self.d.B[k], x) - _mv(self.d.L[k], zp)

    def driver(self, k, x, yp, zp):
        d = self.d
        return -(_mv(d.A[k], yp) + _mv(d.B[k], zp) + _mv(self.gain[k], x) + d.alpha[k])


def assemble_blq(data, verify_samples=10_000, seed=0):
    """Optimality system of the backward problem with the control eliminated.

    The domination data use ``mu = 1``, ``M_dom = M^{1/2}`` and the stacked
    ``B_dom = [Q^{1/2}; 0]``, ``C_dom = [0; L^{1/2}]``.
    """
    maps = _BlqMaps(data)
    topo, n = data.topology, data.n
    coeffs = CoefficientSet(topo, n, maps.initial, maps.terminal, maps.drift, maps.diffusion,
                            maps.driver, "backward LQ optimality system")
    q_half = [np.stack([_sym_power(Q, 0.5) if np.any(Q) else Q for Q in Qk]) for Qk in data.Q]
    l_half = [np.stack([_sym_power(L, 0.5) if np.any(L) else L for L in Lk]) for Lk in data.L]
    zero = [np.zeros_like(a) for a in q_half]
    B_dom = tuple(np.concatenate([a, z], axis=1) for a, z in zip(q_half, zero))
    C_dom = tuple(np.concatenate([z, a], axis=1) for a, z in zip(l_half, zero))
    A_dom = tuple(np.zeros((topo.n_nodes(k), 2 * n, n)) for k in range(topo.horizon))
    m_half = _sym_power(data.M, 0.5)
    K = _bound(np.linalg.norm(m_half, 2),
               *[np.linalg.norm(a, 2, axis=(1, 2)).max() for a in q_half + l_half])
    dom = DominationData(topo, 1.0, 0.0, m_half, np.zeros((topo.n_nodes(topo.horizon), n, n)),
                         A_dom, B_dom, C_dom, bound=K)
    report = check_conditions(coeffs, dom, verify_samples, seed=seed) if verify_samples else None
    if report is not None and not report.passed:
        raise VerificationError(f"backward LQ system failed its condition check: "
                                f"{report.violations}")
    return HamiltonianSystem(coeffs, dom, report)


@dataclass(frozen=True)
class BlqSolution:
    """Optimal control with the adjoint ``x`` and state ``y``.

    Unpacks as ``(v, x, y, cost)``.
    """

    v: AdaptedProcess
    x: AdaptedProcess
    y: AdaptedProcess
    cost: float
    stationarity: float
    oracle_gap: float
    diagnostics: object

    def __iter__(self):
        return iter((self.v, self.x, self.y, self.cost))


def solve_blq(data, options=None, verify_samples=2000):
    """Solve the backward problem through its optimality system."""
    coeffs, dom = assemble_blq(data, verify_samples)
    sol, diag = solve_fbsde(coeffs, dom, None, 1.0, _default_options(options))
    ref = solve_linear_direct(coeffs)
    gap = sol.relative_distance(ref)
    if gap > 1e-8:
        raise VerificationError(f"continuation and direct solutions differ by {gap:.3e}")
    topo = data.topology
    v, stat = [], 0.0
    for k in range(topo.horizon):
        Rinv = np.linalg.inv(data.R[k])
        vk = _mv(Rinv, _mtv(data.C[k], sol.x[k]))
        v.append(vk)
        defect = _mtv(data.C[k], sol.x[k]) - _mv(data.R[k], vk)
        stat = max(stat, float(np.max(np.linalg.norm(defect, axis=1))))
    control = AdaptedProcess(topo, 0, v)
    return BlqSolution(control, sol.x, sol.y, cost_blq(data, control), stat, gap, diag)


def cost_blq(data, v):
    """Criterion of the backward problem for control ``v``."""
    v = _control_levels(data.topology, v, data.m, "control")
    topo, N = data.topology, data.topology.horizon
    y = solve_bsde(BsdeProblem(
        topo, data.eta,
        lambda k, yp, zp: _mv(data.A[k], yp) + _mv(data.B[k], zp) + _mv(data.C[k], v[k])
        + data.alpha[k]))
    y0 = y[0][0]
    total = float(y0 @ data.M @ y0)
    for k in range(N):
        yp, zp = cond_prev(y[k + 1], topo)
        total += (_quad(topo, data.Q[k], yp) + _quad(topo, data.L[k], zp)
                  + _quad(topo, data.R[k], v[k]))
    return 0.5 * total


def oracle_blq(data):
    """Minimise the backward criterion as a quadratic in the stacked controls."""
    topo, n, m = data.topology, data.n, data.m
    N = topo.horizon
    offs = _offsets(topo, m)
    size = int(offs[-1])
    H = np.zeros((size, size))
    g = np.zeros(size)
    Y = np.zeros((topo.n_nodes(N), n, size))
    c = np.array(data.eta, dtype=float)
    for k in range(N - 1, -1, -1):
        nodes = topo.n_nodes(k)
        probs = topo.node_probabilities(k)
        U = np.zeros((nodes, m, size))
        for v in range(nodes):
            U[v, :, offs[k] + v * m: offs[k] + (v + 1) * m] = np.eye(m)
        Yp, Zp = cond_prev(Y, topo)
        cp, zc = cond_prev(c, topo)
        for mats, lin, const in ((data.Q[k], Yp, cp), (data.L[k], Zp, zc)):
            ML = np.einsum("vij,vjd->vid", mats, lin)
            H += np.einsum("v,vie,vid->ed", probs, lin, ML)
            g += np.einsum("v,vie,vi->e", probs, ML, const)
        H += np.einsum("v,vie,vij,vjd->ed", probs, U, data.R[k], U)
        Y = (np.einsum("vij,vjd->vid", data.A[k], Yp) + np.einsum("vij,vjd->vid", data.B[k], Zp)
             + np.einsum("vij,vjd->vid", data.C[k], U))
        c = _mv(data.A[k], cp) + _mv(data.B[k], zc) + data.alpha[k]
    MY = np.einsum("ij,jd->id", data.M, Y[0])
    H += Y[0].T @ MY
    g += MY.T @ c[0]
    H = 0.5 * (H + H.T)
    d, grad = _solve_normal(H, g)
    v = AdaptedProcess(topo, 0, [d[offs[k]:offs[k + 1]].reshape(-1, m) for k in range(N)])
    return OracleResult(None, v, cost_blq(data, v), grad, d)


# -- random instances ----------------------------------------------------------

def _psd(rng, n, scale):
    w = rng.standard_normal((n, n))
    return scale * (w @ w.T) / n


def random_flq(topology, n=2, m=1, seed=0, scale=0.3):
    """Random forward problem with node-dependent coefficients.

    ``scale`` controls the size of the random parts of ``A``, ``B``, ``C``,
    ``D``; it also sets how strongly the optimality system is coupled.
    """
    rng = np.random.default_rng(seed)
    N = topology.horizon
    nodes = [topology.n_nodes(k) for k in range(N + 1)]

    def per_node(make):
        return [np.stack([make() for _ in range(c)]) for c in nodes[:N]]

    A = per_node(lambda: 0.5 * np.eye(n) + scale * rng.standard_normal((n, n)) / np.sqrt(n))
    B = per_node(lambda: scale * rng.standard_normal((n, m)))
    C = per_node(lambda: scale * rng.standard_normal((n, n)) / np.sqrt(n))
    D = per_node(lambda: scale * rng.standard_normal((n, m)))
    b = [rng.standard_normal((c, n)) for c in nodes[:N]]
    sigma = [0.5 * rng.standard_normal((c, n)) for c in nodes[:N]]
    Q = per_node(lambda: _psd(rng, n, 0.5))
    R = [np.stack([np.eye(m) + _psd(rng, m, 0.5) for _ in range(c)]) for c in nodes[:N]]
    G = np.stack([_psd(rng, n, 0.5) for _ in range(nodes[N])])
    M = np.eye(n) + _psd(rng, n, 0.5)
    return ForwardLqData.build(topology, n, m, A=A, B=B, C=C, D=D, b=b, sigma=sigma, M=M, G=G,
                               Q=Q, R=R)


def random_blq(topology, n=2, m=1, seed=0, scale=0.3):
    """Random backward problem with node-dependent coefficients."""
    rng = np.random.default_rng(seed)
    N = topology.horizon
    nodes = [topology.n_nodes(k) for k in range(N + 1)]

    def per_node(make):
        return [np.stack([make() for _ in range(c)]) for c in nodes[:N]]

    A = per_node(lambda: 0.5 * np.eye(n) + scale * rng.standard_normal((n, n)) / np.sqrt(n))
    B = per_node(lambda: scale * rng.standard_normal((n, n)) / np.sqrt(n))
    C = per_node(lambda: scale * rng.standard_normal((n, m)))
    alpha = [rng.standard_normal((c, n)) for c in nodes[:N]]
    Q = per_node(lambda: _psd(rng, n, 0.5))
    L = per_node(lambda: _psd(rng, n, 0.5))
    R = [np.stack([np.eye(m) + _psd(rng, m, 0.5) for _ in range(c)]) for c in nodes[:N]]
    eta = rng.standard_normal((nodes[N], n))
    M = np.eye(n) + _psd(rng, n, 0.5)
    return BackwardLqData.build(topology, n, m, A=A, B=B, C=C, alpha=alpha, eta=eta, M=M, Q=Q,
                                L=L, R=R)


# -- insurance example ---------------------------------------------------------

def _insurance_inputs(topology, r, rho, sigma, lam, c, u):
    N = topology.horizon
    arrs = [np.asarray(a, dtype=float).reshape(-1) for a in (r, rho, sigma, lam, c)]
    if any(a.shape != (N,) for a in arrs):
        raise ShapeError(f"rates must be sequences of length N={N}")
    if np.any(arrs[2] <= 0):
        raise UsageError("volatilities must be strictly positive")
    if u is None:
        u = [np.zeros(topology.n_nodes(k)) for k in range(N)]
    u = [f[:, 0] for f in _control_levels(topology, u, 1, "investment")]
    return (*arrs, u)


def insurance_demo(topology, r, rho, sigma, lam, c, m0, u=None):
    """Wealth and liability of the insurance example.

    Wealth follows ``x_{k+1} = (1 + r_k) x_k + rho_k u_k + sigma_k u_k w_k``
    from ``x_0 = m0``.  The liability solves
    ``y_k = E[(1 + lam_k) y_{k+1} - c_k x_k | F_k]`` with ``y_N = 0``.  The
    conditioning is on ``F_k``, one step finer than in the coupled systems,
    so ``y_k`` is stored on level ``k + 1`` for ``k < N``; ``y_N`` is stored as
    zeros on level ``N``.

    Returns
    -------
    (AdaptedProcess, list of ndarray)
        Wealth ``x_0..x_N`` and the liability fields ``y_0..y_N``.
    """
    r, rho, sigma, lam, c, u = _insurance_inputs(topology, r, rho, sigma, lam, c, u)
    N = topology.horizon
    w = topology.w
    x = [np.array([float(m0)])]
    for k in range(N):
        drift = (1 + r[k]) * x[k] + rho[k] * u[k]
        x.append((drift[:, None] + sigma[k] * u[k][:, None] * w[None, :]).ravel())
    y = [None] * (N + 1)
    y[N] = np.zeros(topology.n_nodes(N))
    for k in range(N - 1, -1, -1):
        # y_{k+1} lives on level k+2 (or is the zero terminal value)
        nxt = y[k + 1] if k + 1 < N else np.zeros(topology.n_nodes(k + 1))
        if k + 1 < N:
            nxt = topology.children(nxt) @ topology.p
        y[k] = (1 + lam[k]) * nxt - c[k] * topology.spread(x[k])
    return AdaptedProcess(topology, 0, x), [f[:, None] for f in y]


def insurance_residual(topology, r, rho, sigma, lam, c, m0, u, x, y):
    """Largest defect of the wealth and liability recursions at any node."""
    r, rho, sigma, lam, c, u = _insurance_inputs(topology, r, rho, sigma, lam, c, u)
    N, q = topology.horizon, topology.q
    worst = abs(float(x[0][0, 0]) - float(m0))
    for k in range(N):
        for v in range(topology.n_nodes(k)):
            for j in range(q):
                pred = ((1 + r[k]) * x[k][v, 0] + rho[k] * u[k][v]
                        + sigma[k] * u[k][v] * topology.w[j])
                worst = max(worst, abs(x[k + 1][v * q + j, 0] - pred))
    worst = max(worst, float(np.max(np.abs(y[N]))))
    for k in range(N):
        for a in range(topology.n_nodes(k + 1)):
            if k + 1 < N:
                nxt = sum(topology.p[j] * y[k + 1][a * q + j, 0] for j in range(q))
            else:
                nxt = 0.0
            want = (1 + lam[k]) * nxt - c[k] * x[k][a // q, 0]
            worst = max(worst, abs(y[k][a, 0] - want))
    return worst


def insurance_liability_by_paths(topology, r, rho, sigma, lam, c, m0, u=None):
    """``y_0`` by explicit enumeration of every noise path.

    Unrolling the liability recursion gives
    ``y_0 = -sum_j prod_{i<j} (1 + lam_i) E[c_j x_j | F_0]``; each path is
    simulated on its own and the payments are averaged over the paths that
    share the first noise value.

    Returns
    -------
    ndarray, shape (q,)
        ``y_0`` for each realisation of ``w_0``.
    """
    r, rho, sigma, lam, c, u = _insurance_inputs(topology, r, rho, sigma, lam, c, u)
    N, q = topology.horizon, topology.q
    out = np.zeros(q)
    for path in product(range(q), repeat=N):
        x, node, total = float(m0), 0, 0.0
        for j in range(N):
            discount = np.prod(1 + lam[:j])
            total += discount * c[j] * x
            x = (1 + r[j]) * x + rho[j] * u[j][node] + sigma[j] * u[j][node] * topology.w[path[j]]
            node = node * q + path[j]
        prob = np.prod([topology.p[i] for i in path[1:]])
        out[path[0]] -= prob * total
    return out
