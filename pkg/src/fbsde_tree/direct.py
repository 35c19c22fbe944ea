"""Method-independent oracle for affine coupled systems.

All node values ``x_k(v)``, ``y_k(v)`` are stacked into one vector and the
forward child equations, backward node equations and both boundary
conditions become one sparse square system solved by LU.
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .continuation import PerturbationData, SolutionPair, _check_dims, _residual_levels
from .errors import SolvabilityError, UsageError

__all__ = ["AffineProbe", "probe_affine", "solve_linear_direct"]


class AffineProbe:
    """Matrices and offsets recovered from an affine coefficient set.

    ``gamma[name][k]`` is ``(Lx, Ly, Lz, c)`` with node-indexed ``(q**k, n, n)``
    blocks and ``(q**k, n)`` offsets.
    """

    def __init__(self, initial, terminal, gamma):
        self.initial, self.terminal, self.gamma = initial, terminal, gamma


def _probe_block(fn, base, n, rng, tol, what):
    # Evaluate at 0 and at unit vectors broadcast over all nodes, in one batch.
    nodes = base.shape[0]
    batch = np.zeros((1 + n,) + base.shape)
    for i in range(n):
        batch[1 + i, :, i] = 1.0
    out = np.asarray(fn(batch), dtype=float)
    c = out[0]
    L = np.stack([out[1 + i] - c for i in range(n)], axis=-1)
    probe = rng.standard_normal(base.shape)
    got = np.asarray(fn(probe), dtype=float)
    want = np.einsum("vij,vj->vi", L, probe) + c
    if not np.allclose(got, want, rtol=1e-9, atol=1e-9):
        raise UsageError(f"{what} is not affine")
    return L.reshape(nodes, n, n), c


def probe_affine(coeffs, seed=0):
    """Recover the affine blocks of ``coeffs`` exactly.

    Raises
    ------
    UsageError
        If a map fails the affinity check at a random probe point.
    """
    topo, n = coeffs.topology, coeffs.dim
    N = topo.horizon
    rng = np.random.default_rng(seed)
    def initial(y):
        return coeffs.initial(y[..., 0, :])[..., None, :]

    Li, ci = _probe_block(initial, np.zeros((1, n)), n, rng, 1e-9, "initial map")
    terminal = _probe_block(coeffs.terminal, np.zeros((topo.n_nodes(N), n)), n, rng, 1e-9,
                            "terminal map")
    gamma = {}
    for name in ("drift", "diffusion", "driver"):
        fn = getattr(coeffs, name)
        levels = []
        for k in range(N):
            zero = np.zeros((topo.n_nodes(k), n))
            blocks = []
            for slot in range(3):
                def part(arg, slot=slot, k=k, zero=zero):
                    args = [np.broadcast_to(zero, arg.shape)] * 3
                    args[slot] = arg
                    return fn(k, *args)
                blocks.append(_probe_block(part, zero, n, rng, 1e-9, f"{name} at k={k}"))
            # the offset is the same from every slot's zero evaluation
            levels.append((blocks[0][0], blocks[1][0], blocks[2][0], blocks[0][1]))
        gamma[name] = levels
    # joint affinity: the sum of partial maps must reproduce a joint evaluation
    for name in ("drift", "diffusion", "driver"):
        for k in range(N):
            Lx, Ly, Lz, c = gamma[name][k]
            args = [rng.standard_normal((topo.n_nodes(k), n)) for _ in range(3)]
            want = sum(np.einsum("vij,vj->vi", L, a) for L, a in zip((Lx, Ly, Lz), args)) + c
            if not np.allclose(getattr(coeffs, name)(k, *args), want, rtol=1e-9, atol=1e-9):
                raise UsageError(f"{name} at k={k} is not jointly affine")
    return AffineProbe((Li[0], ci[0]), terminal, gamma)


def solve_linear_direct(coeffs, perturbation=None, probe=None):
    """Solve an affine coupled system by one stacked sparse LU factorisation.

    Parameters
    ----------
    coeffs : CoefficientSet
        Must be affine in ``(x, y', z')``; this is checked by probing.
    perturbation : PerturbationData, optional
    probe : AffineProbe, optional
        Pre-computed blocks, to skip probing.

    Returns
    -------
    SolutionPair

    Raises
    ------
    SolvabilityError
        If the stacked matrix is singular or the solve is inaccurate.
    """
    topo, n = coeffs.topology, coeffs.dim
    N, q = topo.horizon, topo.q
    p = perturbation if perturbation is not None else PerturbationData.zeros(topo, n)
    _check_dims(coeffs, p)
    raw = p._raw()
    probe = probe or probe_affine(coeffs)
    counts = [topo.n_nodes(k) for k in range(N + 1)]
    starts = np.concatenate([[0], np.cumsum(counts)])
    total = int(starts[-1])

    def xcol(k, nodes):
        return (starts[k] + nodes) * n

    def ycol(k, nodes):
        return (total + starts[k] + nodes) * n

    rows, cols, vals = [], [], []
    rhs = np.zeros(2 * total * n)
    eye = np.eye(n)

    def put(r0, c0, blocks):
        # r0, c0: (count,) start indices; blocks: (count, n, n)
        r = r0[:, None, None] + np.arange(n)[None, :, None]
        c = c0[:, None, None] + np.arange(n)[None, None, :]
        r, c, b = np.broadcast_arrays(r, c, blocks)
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(b.ravel())

    # initial condition: x_0 - L y_0 = c + xi
    Li, ci = probe.initial
    row = 0
    put(np.array([row]), xcol(0, np.array([0])), eye[None])
    put(np.array([row]), ycol(0, np.array([0])), -Li[None])
    rhs[row:row + n] = ci + raw.xi
    row += n
    w, pr = topo.w, topo.p
    for k in range(N):
        nodes = np.arange(counts[k])
        bx, by, bz, bc = probe.gamma["drift"][k]
        sx, sy, sz, sc = probe.gamma["diffusion"][k]
        for j in range(q):
            children = nodes * q + j
            r0 = row + np.arange(counts[k]) * n
            put(r0, xcol(k + 1, children), np.broadcast_to(eye, (counts[k], n, n)))
            put(r0, xcol(k, nodes), -(bx + w[j] * sx))
            for i in range(q):
                coef = -((by + w[j] * sy) * pr[i] + (bz + w[j] * sz) * pr[i] * w[i])
                put(r0, ycol(k + 1, nodes * q + i), coef)
            rhs[row:row + counts[k] * n] = (bc + w[j] * sc + raw.psi[k]
                                            + w[j] * raw.gamma[k]).ravel()
            row += counts[k] * n
        fx, fy, fz, fc = probe.gamma["driver"][k]
        r0 = row + np.arange(counts[k]) * n
        put(r0, ycol(k, nodes), np.broadcast_to(eye, (counts[k], n, n)))
        put(r0, xcol(k, nodes), fx)
        for i in range(q):
            put(r0, ycol(k + 1, nodes * q + i), fy * pr[i] + fz * pr[i] * w[i])
        rhs[row:row + counts[k] * n] = (-fc - raw.phi[k]).ravel()
        row += counts[k] * n
    Lt, ct = probe.terminal
    nodes = np.arange(counts[N])
    r0 = row + nodes * n
    put(r0, ycol(N, nodes), np.broadcast_to(eye, (counts[N], n, n)))
    put(r0, xcol(N, nodes), -Lt)
    rhs[row:row + counts[N] * n] = (ct + raw.eta).ravel()
    row += counts[N] * n
    assert row == 2 * total * n

    mat = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(row, row))
    try:
        sol = splu(mat).solve(rhs)
    except RuntimeError as exc:
        raise SolvabilityError(f"stacked system is singular: {exc}",
                               condition=_condition(mat)) from None
    if not np.all(np.isfinite(sol)):
        raise SolvabilityError("stacked solve produced non-finite values",
                               condition=_condition(mat))
    flat_x = sol[:total * n].reshape(total, n)
    flat_y = sol[total * n:].reshape(total, n)
    xs = [flat_x[starts[k]:starts[k + 1]] for k in range(N + 1)]
    ys = [flat_y[starts[k]:starts[k + 1]] for k in range(N + 1)]
    res = _residual_levels(coeffs, raw, xs, ys).overall
    scale = 1.0 + float(np.max(np.abs(sol)))
    if res > 1e-8 * scale:
        raise SolvabilityError(f"stacked solve is inaccurate (residual {res:.3e})",
                               condition=_condition(mat))
    return SolutionPair.from_levels(topo, xs, ys)


def _condition(mat):
    if mat.shape[0] > 4000:
        return None
    return float(np.linalg.cond(mat.toarray()))
