"""Slow, independent reference computations used by the tests.

Nothing here shares code with the package beyond the topology object: node
indices are rebuilt from explicit noise histories and every recursion is
written as plain loops.
"""

from itertools import product

import numpy as np


def histories(topo, k):
    """All noise histories of length k in node order with their probabilities."""
    out = []
    for digits in product(range(topo.q), repeat=k):
        prob = 1.0
        for j in digits:
            prob *= topo.p[j]
        out.append((digits, prob))
    return out


def node_index(topo, digits):
    idx = 0
    for j in digits:
        idx = idx * topo.q + j
    return idx


def cond_prev_loop(topo, field):
    field = np.asarray(field, dtype=float)
    parents = field.shape[0] // topo.q
    yp = np.zeros((parents,) + field.shape[1:])
    zp = np.zeros_like(yp)
    for v in range(parents):
        for j in range(topo.q):
            yp[v] += topo.p[j] * field[v * topo.q + j]
            zp[v] += topo.p[j] * topo.w[j] * field[v * topo.q + j]
    return yp, zp


def sde_by_paths(topo, eta, drift, diffusion):
    """Simulate every path separately; drift/diffusion take (k, x_vector)."""
    N = topo.horizon
    levels = [np.zeros((topo.q ** k, len(eta))) for k in range(N + 1)]
    for digits, _ in histories(topo, N):
        x = np.array(eta, dtype=float)
        levels[0][0] = x
        for k in range(N):
            x = drift(k, x) + diffusion(k, x) * topo.w[digits[k]]
            levels[k + 1][node_index(topo, digits[:k + 1])] = x
    return levels


def kkt_flq(data):
    """Forward LQ problem as an equality-constrained QP in (x, u) jointly.

    Unknowns are every node value of the state and of the control; the state
    equation enters as equality constraints and the KKT matrix is solved
    densely.  Returns ``(xi, [u_k], cost)``.
    """
    topo, n, m = data.topology, data.n, data.m
    N, q = topo.horizon, topo.q
    xs = [topo.q ** k for k in range(N + 1)]
    x_off = np.concatenate([[0], np.cumsum(xs)]) * n
    nx = int(x_off[-1])
    us = xs[:N]
    u_off = nx + np.concatenate([[0], np.cumsum(us)]) * m
    size = int(u_off[-1])
    H = np.zeros((size, size))
    rows, rhs = [], []
    H[:n, :n] += data.M
    for k in range(N):
        probs = topo.node_probabilities(k)
        for v in range(xs[k]):
            xi = slice(x_off[k] + v * n, x_off[k] + (v + 1) * n)
            ui = slice(u_off[k] + v * m, u_off[k] + (v + 1) * m)
            H[xi, xi] += probs[v] * data.Q[k][v]
            H[ui, ui] += probs[v] * data.R[k][v]
            for j in range(q):
                c = v * q + j
                w = topo.w[j]
                for i in range(n):
                    row = np.zeros(size)
                    row[x_off[k + 1] + c * n + i] = 1.0
                    row[xi] -= data.A[k][v][i] + w * data.C[k][v][i]
                    row[ui] -= data.B[k][v][i] + w * data.D[k][v][i]
                    rows.append(row)
                    rhs.append(data.b[k][v][i] + w * data.sigma[k][v][i])
    probs = topo.node_probabilities(N)
    for v in range(xs[N]):
        xi = slice(x_off[N] + v * n, x_off[N] + (v + 1) * n)
        H[xi, xi] += probs[v] * data.G[v]
    E = np.array(rows)
    kkt = np.block([[H, E.T], [E, np.zeros((len(rows), len(rows)))]])
    sol = np.linalg.solve(kkt, np.concatenate([np.zeros(size), rhs]))
    z = sol[:size]
    u = [z[u_off[k]:u_off[k + 1]].reshape(-1, m) for k in range(N)]
    return z[:n], u, 0.5 * float(z @ H @ z)
