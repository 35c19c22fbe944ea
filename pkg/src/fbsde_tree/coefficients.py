"""Coefficient systems of coupled forward-backward difference equations.

A :class:`CoefficientSet` collects the five maps of the system

    x_{k+1} = b(k, theta_k) + sigma(k, theta_k) w_k
    y_k     = -f(k+1, theta_k)
    x_0     = Lambda(y_0)
    y_N     = Phi(x_N)

with ``theta_k = (x_k, y'_{k+1}, z'_{k+1})``.

Calling convention
------------------
Every map is vectorised over the nodes of one level.  ``drift``,
``diffusion`` and ``driver`` are called as ``fn(k, x, yp, zp)`` where the three
arrays have shape ``(..., q**k, n)``; row ``v`` of the node axis is evaluated
with the coefficients of level-``k`` node ``v``.  ``driver(k, ...)`` is the
backward driver ``f(k+1, .)`` evaluated on level ``k``.  ``terminal(x)`` takes
``(..., q**N, n)`` and ``initial(y)`` takes ``(..., n)``.  Leading axes are
batch axes and must be broadcast through unchanged.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ShapeError, UsageError, VerificationError
from .tree import TreeTopology

__all__ = [
    "CoefficientSet",
    "DominationData",
    "ConditionReport",
    "affine_coefficients",
    "pq_maps",
    "blend_alpha",
    "negate",
    "reorient",
    "check_conditions",
    "make_monotone_family",
    "FAMILIES",
    "node_blocks",
]


def _apply(mats, vecs):
    """Row-wise ``mats[v] @ vecs[..., v, :]``."""
    return np.einsum("vij,...vj->...vi", mats, vecs)


def _apply_t(mats, vecs):
    """Row-wise ``mats[v].T @ vecs[..., v, :]``."""
    return np.einsum("vji,...vj->...vi", mats, vecs)


def _node_matrices(topology, k, value, shape):
    """Broadcast a constant matrix, or validate per-node matrices, at level k."""
    nodes = topology.n_nodes(k)
    arr = np.asarray(value, dtype=float)
    if arr.shape == shape:
        return np.broadcast_to(arr, (nodes,) + shape).copy()
    if arr.shape == (nodes,) + shape:
        return arr.copy()
    raise ShapeError(f"level {k}: expected shape {shape} or {(nodes,) + shape}, got {arr.shape}")


def _per_level(topology, value, shape, levels):
    """Expand ``value`` to a list of node arrays, one per level in ``levels``.

    ``value`` is either a single array (constant in time) or a sequence with
    one entry per level.
    """
    if value is None:
        return [np.zeros((topology.n_nodes(k),) + shape) for k in levels]
    if isinstance(value, (list, tuple)) and len(value) == len(levels) and not (
            np.asarray(value[0]).ndim == 0):
        try:
            return [_node_matrices(topology, k, v, shape) for k, v in zip(levels, value)]
        except ShapeError:
            if np.asarray(value, dtype=object).shape[:1] != (len(levels),):
                raise
    return [_node_matrices(topology, k, value, shape) for k in levels]


def _lift(value, shape):
    # scalars mean multiples of the identity for square blocks, constants otherwise
    if value is None or isinstance(value, (list, tuple)) or np.ndim(value) > 0:
        return value
    if len(shape) == 2 and shape[0] == shape[1]:
        return float(value) * np.eye(shape[0])
    return np.full(shape, float(value))


def node_blocks(topology, value, shape, levels):
    """Like :func:`_per_level` but scalars are lifted first.

    A scalar stands for that multiple of the identity when ``shape`` is
    square and for a constant array otherwise; per-time lists may mix
    scalars and arrays.
    """
    if isinstance(value, (list, tuple)) and len(value) == len(levels):
        value = [_lift(v, shape) for v in value]
    return _per_level(topology, _lift(value, shape), shape, levels)


@dataclass(frozen=True)
class CoefficientSet:
    """The maps ``(Lambda, Phi, f, b, sigma)`` on a fixed scenario tree."""

    topology: TreeTopology
    dim: int
    initial: object
    terminal: object
    drift: object
    diffusion: object
    driver: object
    label: str = ""

    def gamma(self, k, x, yp, zp):
        """``(f(k+1, theta), b(k, theta), sigma(k, theta))`` at level ``k``."""
        return (self.driver(k, x, yp, zp), self.drift(k, x, yp, zp),
                self.diffusion(k, x, yp, zp))


class _Affine:
    # Node-indexed affine blocks; instances are used as the bound maps.

    def __init__(self, topology, n, initial, terminal, drift, diffusion, driver):
        self.topology, self.n = topology, n
        self.init_mat, self.init_off = initial
        self.term_mat, self.term_off = terminal
        self.blocks = {"drift": drift, "diffusion": diffusion, "driver": driver}

    def initial(self, y):
        return np.einsum("ij,...j->...i", self.init_mat, y) + self.init_off

    def terminal(self, x):
        return _apply(self.term_mat, x) + self.term_off

    def _gamma(self, name, k, x, yp, zp):
        lx, ly, lz, off = (part[k] for part in self.blocks[name])
        return _apply(lx, x) + _apply(ly, yp) + _apply(lz, zp) + off

    def drift(self, k, x, yp, zp):
        return self._gamma("drift", k, x, yp, zp)

    def diffusion(self, k, x, yp, zp):
        return self._gamma("diffusion", k, x, yp, zp)

    def driver(self, k, x, yp, zp):
        return self._gamma("driver", k, x, yp, zp)


def affine_coefficients(topology, n, *, initial=None, terminal=None, drift=None,
                        diffusion=None, driver=None, label="affine"):
    """Coefficient set whose maps are node-indexed affine blocks.

    ``initial`` and ``terminal`` are dicts with optional ``matrix`` and
    ``offset`` entries; ``terminal`` may carry per-node arrays of shape
    ``(q**N, n, n)`` / ``(q**N, n)``.  ``drift``, ``diffusion`` and ``driver``
    are dicts with optional ``x``, ``y``, ``z`` (matrices acting on ``x``,
    ``y'``, ``z'``) and ``offset`` entries, each constant, a per-time list, or a
    per-time list of per-node arrays.  Missing entries are zero.
    """
    N = topology.horizon
    steps = range(N)
    initial = initial or {}
    terminal = terminal or {}
    init = (np.asarray(initial.get("matrix", np.zeros((n, n))), dtype=float),
            np.asarray(initial.get("offset", np.zeros(n)), dtype=float))
    if init[0].shape != (n, n) or init[1].shape != (n,):
        raise ShapeError("initial map must be an (n, n) matrix and an (n,) offset")
    term = (_node_matrices(topology, N, terminal.get("matrix", np.zeros((n, n))), (n, n)),
            _node_matrices(topology, N, terminal.get("offset", np.zeros(n)), (n,)))

    def blocks(spec):
        spec = spec or {}
        mats = [_per_level(topology, spec.get(key), (n, n), steps) for key in "xyz"]
        offs = _per_level(topology, spec.get("offset"), (n,), steps)
        return (*mats, offs)

    aff = _Affine(topology, n, init, term, blocks(drift), blocks(diffusion), blocks(driver))
    return CoefficientSet(topology, n, aff.initial, aff.terminal, aff.drift,
                          aff.diffusion, aff.driver, label)


@dataclass(frozen=True)
class DominationData:
    """Constants and matrices of the domination-monotonicity conditions.

    Attributes
    ----------
    mu, v : float
        Exactly one of them is strictly positive.
    M : ndarray, shape (m_bar, n)
        Deterministic weight of the initial coupling.
    G : ndarray, shape (q**N, m_tilde, n)
        Terminal weight, one matrix per level-``N`` node.
    A, B, C : list of ndarray
        ``A[k]``, ``B[k]``, ``C[k]`` have shape ``(q**k, m, n)``.
    bound : float
        Constant ``K`` multiplying ``1/mu`` and ``1/v`` in the domination
        inequalities.
    """

    topology: TreeTopology
    mu: float
    v: float
    M: np.ndarray
    G: np.ndarray
    A: tuple
    B: tuple
    C: tuple
    bound: float = 1.0

    def __post_init__(self):
        if self.mu < 0 or self.v < 0:
            raise UsageError("mu and v must be nonnegative")
        if (self.mu > 0) == (self.v > 0):
            raise UsageError("exactly one of mu and v must be strictly positive")
        if not self.bound > 0:
            raise UsageError("domination bound must be positive")
        arrays = [self.M, self.G, *self.A, *self.B, *self.C]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise UsageError("domination matrices must be finite")

    @classmethod
    def build(cls, topology, n, mu=0.0, v=0.0, M=None, G=None, A=None, B=None, C=None,
              m=None, bound=1.0):
        """Broadcast constant matrices onto the tree; missing matrices are zero."""
        N = topology.horizon
        steps = range(N)

        if m is None:
            # row count from the first matrix given as an array, else square
            given = [a for a in (A, B, C)
                     if a is not None and not isinstance(a, (list, tuple)) and np.ndim(a) >= 2]
            m = np.shape(given[0])[-2] if given else n
        M = np.zeros((n, n)) if M is None else np.atleast_2d(np.asarray(M, dtype=float))
        mt = n if G is None else np.asarray(G).shape[-2]
        G = _node_matrices(topology, N, np.zeros((mt, n)) if G is None else G, (mt, n))
        mats = []
        for value in (A, B, C):
            if value is None:
                mats.append(tuple(np.zeros((topology.n_nodes(k), m, n)) for k in steps))
            else:
                mats.append(tuple(_per_level(topology, value, (m, n), steps)))
        return cls(topology, float(mu), float(v), M, G, *mats, bound=float(bound))

    @property
    def case(self):
        return 1 if self.mu > 0 else 2

    # Linear maps of the decoupled (alpha = 0) system.
    def core_initial(self, y):
        return -self.mu * np.einsum("ji,...j->...i", self.M, np.einsum("ij,...j->...i", self.M, y))

    def core_terminal(self, x):
        return self.v * _apply_t(self.G, _apply(self.G, x))

    def core_driver(self, k, x):
        return -self.v * _apply_t(self.A[k], _apply(self.A[k], x))

    def q_map(self, k, yp, zp):
        return _apply(self.B[k], yp) + _apply(self.C[k], zp)

    def core_drift(self, k, yp, zp):
        return -self.mu * _apply_t(self.B[k], self.q_map(k, yp, zp))

    def core_diffusion(self, k, yp, zp):
        return -self.mu * _apply_t(self.C[k], self.q_map(k, yp, zp))


def pq_maps(domination, k, x, yp, zp, node=None):
    """``P = A_k x`` and ``Q = B_k y' + C_k z'``.

    Vectorised over the level-``k`` nodes by default; pass ``node`` to evaluate
    one node with plain ``(n,)`` vectors.
    """
    A, B, C = domination.A[k], domination.B[k], domination.C[k]
    if node is not None:
        x, yp, zp = (np.asarray(a, dtype=float) for a in (x, yp, zp))
        n = A.shape[2]
        if x.shape != (n,) or yp.shape != (n,) or zp.shape != (n,):
            raise ShapeError(f"expected ({n},) vectors")
        return A[node] @ x, B[node] @ yp + C[node] @ zp
    if np.shape(x)[-1] != A.shape[2] or np.shape(x)[-2] != A.shape[0]:
        raise ShapeError("state shape does not match the domination matrices")
    return _apply(A, x), domination.q_map(k, yp, zp)


def blend_alpha(coeffs, domination, alpha):
    """Convex blend of a coefficient set with the decoupled linear core.

    At ``alpha = 1`` the input is returned unchanged; at ``alpha = 0`` only
    the core ``(-mu M^T M y, v G^T G x, -v A^T A x, -mu B^T Q, -mu C^T Q)``
    remains.
    """
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise UsageError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return coeffs
    d, a, r = domination, alpha, 1.0 - alpha

    def initial(y):
        return a * coeffs.initial(y) + r * d.core_initial(y)

    def terminal(x):
        return a * coeffs.terminal(x) + r * d.core_terminal(x)

    def driver(k, x, yp, zp):
        return a * coeffs.driver(k, x, yp, zp) + r * d.core_driver(k, x)

    def drift(k, x, yp, zp):
        return a * coeffs.drift(k, x, yp, zp) + r * d.core_drift(k, yp, zp)

    def diffusion(k, x, yp, zp):
        return a * coeffs.diffusion(k, x, yp, zp) + r * d.core_diffusion(k, yp, zp)

    return CoefficientSet(coeffs.topology, coeffs.dim, initial, terminal, drift, diffusion,
                          driver, f"{coeffs.label}@alpha={alpha:g}")


def negate(coeffs):
    """Negate every map; turns the standard monotone orientation into the flipped one."""
    c = coeffs
    return CoefficientSet(
        c.topology, c.dim,
        lambda y: -c.initial(y),
        lambda x: -c.terminal(x),
        lambda k, x, yp, zp: -c.drift(k, x, yp, zp),
        lambda k, x, yp, zp: -c.diffusion(k, x, yp, zp),
        lambda k, x, yp, zp: -c.driver(k, x, yp, zp),
        f"-({c.label})")


def reorient(coeffs):
    """Coefficients for ``(x, -y)`` when ``(x, y)`` solves the given system.

    A system monotone in the flipped orientation becomes monotone in the
    standard orientation; the map is an involution.
    """
    c = coeffs
    return CoefficientSet(
        c.topology, c.dim,
        lambda y: c.initial(-y),
        lambda x: -c.terminal(x),
        lambda k, x, yp, zp: c.drift(k, x, -yp, -zp),
        lambda k, x, yp, zp: c.diffusion(k, x, -yp, -zp),
        lambda k, x, yp, zp: -c.driver(k, x, -yp, -zp),
        f"reoriented({c.label})")


@dataclass
class ConditionReport:
    """Outcome of a sampled check of the domination-monotonicity conditions.

    ``samples``, ``violations`` and ``worst_slack`` are keyed by inequality
    name (``"domination/<map>"`` or ``"monotone/<map>"``).  A slack is the
    amount by which an inequality holds; negative slack beyond the tolerance
    counts as a violation.  Lipschitz constants are empirical maxima of
    difference quotients over the same samples.
    """

    orientation: str
    tolerance: float
    samples: dict = field(default_factory=dict)
    violations: dict = field(default_factory=dict)
    worst_slack: dict = field(default_factory=dict)
    lipschitz: dict = field(default_factory=dict)

    def record(self, name, slack):
        slack = np.ravel(slack)
        self.samples[name] = self.samples.get(name, 0) + slack.size
        self.violations[name] = (self.violations.get(name, 0)
                                 + int(np.count_nonzero(slack < -self.tolerance)))
        worst = float(slack.min()) if slack.size else math.inf
        self.worst_slack[name] = min(self.worst_slack.get(name, math.inf), worst)

    def note_lipschitz(self, name, num, den):
        num, den = np.ravel(num), np.ravel(den)
        mask = den > 0
        est = float(np.max(num[mask] / den[mask])) if mask.any() else 0.0
        self.lipschitz[name] = max(self.lipschitz.get(name, 0.0), est)

    @property
    def total_violations(self):
        return sum(self.violations.values())

    @property
    def passed(self):
        return self.total_violations == 0

    def as_dict(self):
        return {
            "orientation": self.orientation,
            "tolerance": self.tolerance,
            "samples": dict(sorted(self.samples.items())),
            "violations": dict(sorted(self.violations.items())),
            "worst_slack": dict(sorted(self.worst_slack.items())),
            "lipschitz_empirical": dict(sorted(self.lipschitz.items())),
            "passed": self.passed,
        }


def _norm(a):
    return np.linalg.norm(a, axis=-1)


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def check_conditions(coeffs, domination, sample_count=10_000, seed=0, tolerance=1e-12,
                     orientation="standard", scale=1.0, spread=1.0):
    """Sample the domination and monotonicity inequalities.

    Pairs ``(theta, theta_bar)`` are drawn as ``theta ~ scale * N(0, I)`` and
    ``theta_bar = theta + spread * N(0, I)`` at every node of every level, so
    ``spread = 0`` evaluates coincident pairs.  Roughly ``sample_count`` pairs
    are drawn per inequality family.

    Parameters
    ----------
    orientation : {"standard", "flipped"}
        Which sign convention the monotonicity inequalities are checked in.

    Returns
    -------
    ConditionReport
    """
    if sample_count < 1:
        raise UsageError("sample_count must be at least 1")
    if orientation not in ("standard", "flipped"):
        raise UsageError(f"unknown orientation {orientation!r}")
    flip = orientation == "flipped"
    topo, n, d = coeffs.topology, coeffs.dim, domination
    N, K = topo.horizon, d.bound
    rng = np.random.default_rng(seed)
    rep = ConditionReport(orientation, float(tolerance))

    def draw(shape):
        a = scale * rng.standard_normal(shape)
        return a, a + spread * rng.standard_normal(shape)

    # initial map
    y, yb = draw((sample_count, n))
    lam_hat = coeffs.initial(y) - coeffs.initial(yb)
    y_hat = y - yb
    m_sq = _norm(np.einsum("ij,...j->...i", d.M, y_hat)) ** 2
    inner = _dot(lam_hat, y_hat)
    rep.record("monotone/initial", inner - d.mu * m_sq if flip else -d.mu * m_sq - inner)
    if d.mu > 0:
        rep.record("domination/initial", K / d.mu * np.sqrt(m_sq) - _norm(lam_hat))
    rep.note_lipschitz("initial", _norm(lam_hat), _norm(y_hat))

    # terminal map
    rounds = max(1, math.ceil(sample_count / topo.n_nodes(N)))
    x, xb = draw((rounds, topo.n_nodes(N), n))
    phi_hat = coeffs.terminal(x) - coeffs.terminal(xb)
    x_hat = x - xb
    g_sq = _norm(_apply(d.G, x_hat)) ** 2
    inner = _dot(phi_hat, x_hat)
    rep.record("monotone/terminal", -d.v * g_sq - inner if flip else inner - d.v * g_sq)
    if d.v > 0:
        rep.record("domination/terminal", K / d.v * np.sqrt(g_sq) - _norm(phi_hat))
    rep.note_lipschitz("terminal", _norm(phi_hat), _norm(x_hat))

    # Gamma = (f, b, sigma)
    per_step = max(1, math.ceil(sample_count / N))
    for k in range(N):
        nodes = topo.n_nodes(k)
        rounds = max(1, math.ceil(per_step / nodes))
        shape = (rounds, nodes, n)
        x, xb = draw(shape)
        yp, ypb = draw(shape)
        zp, zpb = draw(shape)
        f, b, s = coeffs.gamma(k, x, yp, zp)
        fb, bb, sb = coeffs.gamma(k, xb, ypb, zpb)
        xh, yh, zh = x - xb, yp - ypb, zp - zpb
        inner = _dot(f - fb, xh) + _dot(b - bb, yh) + _dot(s - sb, zh)
        p_sq = _norm(_apply(d.A[k], xh)) ** 2
        q_sq = _norm(d.q_map(k, yh, zh)) ** 2
        core = d.v * p_sq + d.mu * q_sq
        rep.record("monotone/gamma", inner - core if flip else -core - inner)
        if d.v > 0:
            f_mixed = coeffs.driver(k, xb, yp, zp)
            rep.record("domination/driver", K / d.v * np.sqrt(p_sq) - _norm(f - f_mixed))
        if d.mu > 0:
            rhs = K / d.mu * np.sqrt(q_sq)
            rep.record("domination/drift", rhs - _norm(b - coeffs.drift(k, x, ypb, zpb)))
            rep.record("domination/diffusion",
                       rhs - _norm(s - coeffs.diffusion(k, x, ypb, zpb)))
        th = np.sqrt(_norm(xh) ** 2 + _norm(yh) ** 2 + _norm(zh) ** 2)
        rep.note_lipschitz("driver", _norm(f - fb), th)
        rep.note_lipschitz("drift", _norm(b - bb), th)
        rep.note_lipschitz("diffusion", _norm(s - sb), th)
    return rep


# -- built-in monotone family ------------------------------------------------

def _random_psd(rng, n, norm):
    w = rng.standard_normal((n, n))
    s = w @ w.T
    return norm * s / np.linalg.norm(s, 2)


def _random_matrix(rng, rows, cols, norm):
    w = rng.standard_normal((rows, cols))
    return norm * w / np.linalg.norm(w, 2)


class _MonotoneFamily:
    # Linear monotone core + skew coupling + offsets + tanh nonlinearity of gain g.

    def __init__(self, topology, n, m, gain, seed, case, coupling, strength):
        rng = np.random.default_rng(seed)
        N = topology.horizon
        self.topology, self.n, self.g, self.case = topology, n, gain, case
        self.core = 1.5 * strength
        nodes = [topology.n_nodes(k) for k in range(N + 1)]

        def stack(count, make):
            return np.stack([make() for _ in range(count)])

        self.E = [stack(c, lambda: coupling * rng.standard_normal((n, n)) / math.sqrt(n))
                  for c in nodes[:N]]
        self.F = [stack(c, lambda: coupling * rng.standard_normal((n, n)) / math.sqrt(n))
                  for c in nodes[:N]]
        self.off_b = [rng.standard_normal((c, n)) for c in nodes[:N]]
        self.off_s = [rng.standard_normal((c, n)) for c in nodes[:N]]
        self.off_f = [rng.standard_normal((c, n)) for c in nodes[:N]]
        self.off_init = rng.standard_normal(n)
        self.off_term = rng.standard_normal((nodes[N], n))
        eye = np.eye(n)
        zeros = [np.zeros((c, m, n)) for c in nodes[:N]]
        if case == 1:
            self.M = _random_matrix(rng, n, n, rng.uniform(0.5, 1.0))
            self.H = stack(nodes[N], lambda: _random_psd(rng, n, rng.uniform(0.0, 1.0)))
            self.S = [stack(c, lambda: (gain + 0.25) * eye + _random_psd(rng, n, 0.75))
                      for c in nodes[:N]]
            self.B = [stack(c, lambda: _random_matrix(rng, m, n, rng.uniform(0.5, 1.0)))
                      for c in nodes[:N]]
            self.C = [stack(c, lambda: _random_matrix(rng, m, n, rng.uniform(0.0, 1.0)))
                      for c in nodes[:N]]
            self.dom = DominationData(topology, strength, 0.0, self.M,
                                      np.zeros((nodes[N], m, n)), tuple(zeros),
                                      tuple(self.B), tuple(self.C))
        else:
            self.W = _random_psd(rng, n, rng.uniform(0.0, 1.0))
            self.G = stack(nodes[N], lambda: _random_matrix(rng, m, n, rng.uniform(0.5, 1.0)))
            self.A = [stack(c, lambda: _random_matrix(rng, m, n, rng.uniform(0.5, 1.0)))
                      for c in nodes[:N]]
            self.Sy = [stack(c, lambda: (gain + 0.25) * eye + _random_psd(rng, n, 0.75))
                       for c in nodes[:N]]
            self.Sz = [stack(c, lambda: 0.25 * eye + _random_psd(rng, n, 0.75))
                       for c in nodes[:N]]
            self.dom = DominationData(topology, 0.0, strength, np.zeros((n, n)), self.G,
                                      tuple(self.A), tuple(zeros), tuple(zeros))

    def initial(self, y):
        if self.case == 1:
            return self.off_init - self.core * y @ self.M.T @ self.M
        return self.off_init - y @ self.W.T - self.g * np.tanh(y)

    def terminal(self, x):
        if self.case == 1:
            return _apply(self.H, x) + self.g * np.tanh(x) + self.off_term
        gx = _apply(self.G, x)
        return (self.core * _apply_t(self.G, gx) - self.g * _apply_t(self.G, np.tanh(gx))
                + self.off_term)

    def driver(self, k, x, yp, zp):
        skew = -_apply_t(self.E[k], yp) - _apply_t(self.F[k], zp) + self.off_f[k]
        if self.case == 1:
            return skew - _apply(self.S[k], x) + self.g * np.tanh(x)
        ax = _apply(self.A[k], x)
        return (skew - self.core * _apply_t(self.A[k], ax)
                + self.g * _apply_t(self.A[k], np.tanh(ax)))

    def drift(self, k, x, yp, zp):
        base = _apply(self.E[k], x) + self.off_b[k]
        if self.case == 1:
            q = _apply(self.B[k], yp) + _apply(self.C[k], zp)
            return base + _apply_t(self.B[k], -self.core * q + self.g * np.tanh(q))
        return base - _apply(self.Sy[k], yp) + self.g * np.tanh(yp)

    def diffusion(self, k, x, yp, zp):
        base = _apply(self.F[k], x) + self.off_s[k]
        if self.case == 1:
            q = _apply(self.B[k], yp) + _apply(self.C[k], zp)
            return base + _apply_t(self.C[k], -self.core * q + self.g * np.tanh(q))
        return base - _apply(self.Sz[k], zp)


def make_monotone_family(topology, n, m=1, gain=0.0, seed=0, case=1, coupling=0.5,
                         strength=0.5, verify_samples=2000):
    """Random instance satisfying the domination-monotonicity conditions.

    The coefficients are a negative-monotone linear core with strength
    ``1.5 * strength`` (``mu`` in case 1, ``v`` in case 2), a skew-symmetric
    forward-backward coupling of size ``coupling`` that contributes nothing to
    the monotonicity pairing, node-dependent random offsets, and a
    componentwise ``tanh`` nonlinearity scaled by ``gain``.  The monotonicity
    margin is ``0.5 * strength``, so ``gain`` must not exceed it.  All domination
    matrices have spectral norm at most one.

    Returns
    -------
    (CoefficientSet, DominationData)

    Raises
    ------
    VerificationError
        If the sampled condition check finds a violation.
    """
    if case not in (1, 2):
        raise UsageError("case must be 1 or 2")
    if not 0 < strength <= 1:
        raise UsageError("strength must lie in (0, 1]")
    gain_bound = 0.5 * strength
    if not 0 <= gain <= gain_bound:
        raise UsageError(f"gain must lie in [0, {gain_bound:g}] for strength {strength:g}")
    fam = _MonotoneFamily(topology, n, m, float(gain), seed, case, float(coupling),
                          float(strength))
    label = f"monotone(case={case}, n={n}, m={m}, gain={gain:g}, seed={seed})"
    coeffs = CoefficientSet(topology, n, fam.initial, fam.terminal, fam.drift,
                            fam.diffusion, fam.driver, label)
    if verify_samples:
        report = check_conditions(coeffs, fam.dom, verify_samples, seed=seed)
        if not report.passed:
            raise VerificationError(f"{label} failed its condition check: {report.violations}")
    return coeffs, fam.dom


FAMILIES = {"monotone": make_monotone_family}
