"""Exact finite filtrations on a non-recombining q-ary scenario tree.

A level-``k`` node is an atom of ``F_{k-1}``: it is identified by the noise
history ``(w_0, ..., w_{k-1})`` written as base-``q`` digits, most significant
digit first.  Child ``j`` of node ``v`` therefore has index ``v * q + j`` and
corresponds to the realisation ``w_k = support[j]``.  Every quantity that is
``F_{k-1}``-measurable is stored as a dense array whose first axis runs over
the ``q**k`` level-``k`` nodes.

All expectations are exact probability-weighted sums over nodes.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import NumericError, ShapeError, UsageError

__all__ = [
    "TreeTopology",
    "AdaptedProcess",
    "cond_prev",
    "expectation",
    "aggregate",
    "random_adapted",
    "require_finite",
]


@dataclass(frozen=True)
class TreeTopology:
    """Horizon and one-step noise law of the scenario tree.

    Parameters
    ----------
    horizon : int
        Number of steps ``N``; node levels run over ``0..N``.
    support : tuple of float
        Values ``w(1..q)`` taken by each martingale difference ``w_k``.
    probabilities : tuple of float
        Probabilities ``p(1..q)`` of those values.

    The law must have zero mean and unit second moment.
    """

    horizon: int
    support: tuple = (1.0, -1.0)
    probabilities: tuple = (0.5, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(float(s) for s in self.support))
        object.__setattr__(
            self, "probabilities", tuple(float(p) for p in self.probabilities))
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise UsageError(f"horizon must be a positive integer, got {self.horizon!r}")
        object.__setattr__(self, "horizon", int(self.horizon))
        w, p = np.asarray(self.support), np.asarray(self.probabilities)
        if len(w) != len(p):
            raise UsageError("support and probabilities differ in length")
        if len(w) < 2:
            raise UsageError("branching q must be at least 2")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(p))):
            raise UsageError("noise law must be finite")
        if np.any(p < 0) or np.any(p > 1):
            raise UsageError("probabilities must lie in [0, 1]")
        if abs(p.sum() - 1.0) > 1e-14:
            raise UsageError(f"probabilities sum to {p.sum()!r}, not 1")
        if abs(p @ w) > 1e-14:
            raise UsageError(f"noise mean is {p @ w!r}, not 0")
        if abs(p @ (w * w) - 1.0) > 1e-12:
            raise UsageError(f"noise second moment is {p @ (w * w)!r}, not 1")

    @classmethod
    def two_point(cls, horizon, a=1.0):
        """Two-point law on ``(a, -1/a)`` with the unique admissible weights.

        ``a = 1`` gives the symmetric Rademacher law.
        """
        a = float(a)
        if a <= 0:
            raise UsageError("two-point parameter must be positive")
        p_up = 1.0 / (1.0 + a * a)
        return cls(horizon, (a, -1.0 / a), (p_up, 1.0 - p_up))

    @property
    def q(self):
        return len(self.support)

    @cached_property
    def w(self):
        return np.asarray(self.support)

    @cached_property
    def p(self):
        return np.asarray(self.probabilities)

    def n_nodes(self, k):
        if not 0 <= k <= self.horizon:
            raise ShapeError(f"level {k} outside 0..{self.horizon}")
        return self.q ** k

    @cached_property
    def _node_probs(self):
        probs = [np.ones(1)]
        for _ in range(self.horizon):
            probs.append(np.outer(probs[-1], self.p).ravel())
        for arr in probs:
            arr.setflags(write=False)
        return tuple(probs)

    @cached_property
    def _last_noise(self):
        out = [np.zeros(1)]
        for k in range(1, self.horizon + 1):
            arr = np.tile(self.w, self.q ** (k - 1))
            arr.setflags(write=False)
            out.append(arr)
        return tuple(out)

    def node_probabilities(self, k):
        """Probabilities of the level-``k`` atoms (they sum to one)."""
        self.n_nodes(k)
        return self._node_probs[k]

    def last_noise(self, k):
        """Realised ``w_{k-1}`` at every level-``k`` node, ``k >= 1``."""
        if not 1 <= k <= self.horizon:
            raise ShapeError(f"no noise step leads into level {k}")
        return self._last_noise[k]

    def digits(self, k, node):
        """Noise history of a node as support indices, oldest first."""
        self.n_nodes(k)
        out = []
        for _ in range(k):
            node, j = divmod(node, self.q)
            out.append(j)
        return tuple(reversed(out))

    def children(self, field):
        """Reshape a level-``k+1`` field to ``(q**k, q, ...)``."""
        field = np.asarray(field)
        return field.reshape((-1, self.q) + field.shape[1:])

    def spread(self, field):
        """Repeat a level-``k`` field onto the ``q`` children of each node."""
        return np.repeat(np.asarray(field), self.q, axis=0)

    def level_of(self, field):
        """Level whose node count matches the leading axis of ``field``."""
        size = np.shape(field)[0]
        count = 1
        for k in range(self.horizon + 1):
            if size == count:
                return k
            count *= self.q
        raise ShapeError(f"{size} rows do not match any level of a q={self.q} tree")


def cond_prev(field, topology):
    """One-step conditional moments of a level-``k+1`` field.

    Returns ``(y', z')`` on level ``k`` with ``y'(v) = sum_j p_j Y(c_j)`` and
    ``z'(v) = sum_j p_j w_j Y(c_j)``, i.e. ``E[Y | F_{k-1}]`` and
    ``E[Y w_k | F_{k-1}]``.
    """
    field = np.asarray(field, dtype=float)
    k1 = topology.level_of(field)
    if k1 == 0:
        raise ShapeError("the root field has no parent level")
    kids = topology.children(field)
    yp = np.tensordot(topology.p, kids, axes=([0], [1]))
    zp = np.tensordot(topology.p * topology.w, kids, axes=([0], [1]))
    return yp, zp


def expectation(topology, field):
    """Exact expectation of a node field (first axis over level nodes)."""
    field = np.asarray(field, dtype=float)
    probs = topology.node_probabilities(topology.level_of(field))
    return np.tensordot(probs, field, axes=([0], [0]))


def require_finite(field, k, what="value"):
    """Return ``field`` or raise :class:`NumericError` at its first bad node."""
    field = np.asarray(field, dtype=float)
    bad = ~np.isfinite(field.reshape(len(field), -1)).all(axis=1)
    if bad.any():
        raise NumericError(f"non-finite {what}", k=k, node=int(np.flatnonzero(bad)[0]))
    return field


def _sq(topology, field):
    field = np.asarray(field, dtype=float)
    return float(expectation(topology, np.sum(field.reshape(len(field), -1) ** 2, axis=1)))


@dataclass(frozen=True)
class AdaptedProcess:
    """Time-indexed node fields; the value at time ``k`` lives on level ``k``.

    ``fields[i]`` is the field at time ``start + i`` with shape ``(q**k, dim)``.
    """

    topology: TreeTopology
    start: int
    fields: tuple

    def __post_init__(self):
        if not len(self.fields):
            raise ShapeError("an adapted process needs at least one time")
        fields = []
        dim = None
        for i, f in enumerate(self.fields):
            k = self.start + i
            f = np.array(f, dtype=float)
            if f.ndim == 1:
                f = f[:, None]
            if f.ndim != 2 or f.shape[0] != self.topology.n_nodes(k):
                raise ShapeError(
                    f"field at time {k} has shape {f.shape}, expected "
                    f"({self.topology.n_nodes(k)}, d)")
            if dim is None:
                dim = f.shape[1]
            elif f.shape[1] != dim:
                raise ShapeError(f"dimension changes at time {k}")
            if not np.all(np.isfinite(f)):
                raise ShapeError(f"non-finite entries at time {k}")
            f.setflags(write=False)
            fields.append(f)
        object.__setattr__(self, "fields", tuple(fields))

    @classmethod
    def zeros(cls, topology, dim, start, stop):
        return cls(topology, start,
                   [np.zeros((topology.n_nodes(k), dim)) for k in range(start, stop + 1)])

    @property
    def dim(self):
        return self.fields[0].shape[1]

    @property
    def stop(self):
        return self.start + len(self.fields) - 1

    @property
    def times(self):
        return range(self.start, self.stop + 1)

    def __getitem__(self, k):
        if not self.start <= k <= self.stop:
            raise ShapeError(f"time {k} outside {self.start}..{self.stop}")
        return self.fields[k - self.start]

    def __len__(self):
        return len(self.fields)

    def map(self, fn):
        return AdaptedProcess(self.topology, self.start, [fn(f) for f in self.fields])

    def __add__(self, other):
        return AdaptedProcess(self.topology, self.start,
                              [a + b for a, b in zip(self.fields, other.fields)])

    def __sub__(self, other):
        return AdaptedProcess(self.topology, self.start,
                              [a - b for a, b in zip(self.fields, other.fields)])

    def scale(self, s):
        return self.map(lambda f: s * f)


def _processes(obj):
    if isinstance(obj, AdaptedProcess):
        return (obj,)
    return tuple(obj)


def aggregate(obj, which="N2"):
    """Squared norm of a process, a product of processes, or a perturbation.

    Parameters
    ----------
    obj
        An :class:`AdaptedProcess`, an iterable of them (e.g. a solution pair),
        or a perturbation exposing ``xi``, ``eta``, ``phi``, ``psi``, ``gamma``.
    which : {"L2", "N2", "rho", "H"}
        ``"L2"`` is ``E|.|^2`` of a single-time process, ``"N2"`` and
        ``"rho"`` sum ``E|._k|^2`` over all times of all components, ``"H"``
        is ``|xi|^2 + E|eta|^2 + ||(phi, psi, gamma)||^2``.

    Returns
    -------
    float
        The squared norm (no square root is taken).
    """
    if which == "H":
        topo = obj.phi.topology
        return (float(np.sum(np.asarray(obj.xi) ** 2))
                + _sq(topo, obj.eta)
                + aggregate((obj.phi, obj.psi, obj.gamma), "rho"))
    if which == "L2":
        procs = _processes(obj)
        if len(procs) != 1 or len(procs[0]) != 1:
            raise UsageError("L2 norm applies to a single-time process")
        return _sq(procs[0].topology, procs[0].fields[0])
    if which in ("N2", "rho"):
        procs = _processes(obj)
        if which == "rho" and len(procs) != 3:
            raise UsageError("rho norm needs exactly three processes")
        return float(sum(_sq(p.topology, f) for p in procs for f in p.fields))
    raise UsageError(f"unknown norm {which!r}")


def random_adapted(topology, dim, start, stop, seed):
    """Process with i.i.d. standard normal entries at every node.

    Deterministic for a fixed 64-bit ``seed``.
    """
    if int(dim) != dim or dim < 1:
        raise UsageError(f"dimension must be a positive integer, got {dim!r}")
    if stop < start:
        raise UsageError("empty time range")
    rng = np.random.default_rng(seed)
    return AdaptedProcess(
        topology, start,
        [rng.standard_normal((topology.n_nodes(k), int(dim))) for k in range(start, stop + 1)])
