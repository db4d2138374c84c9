"""Numerical inner loops, jitted with numba when available.

Every kernel has plain-Python semantics; without numba the same code runs
unjitted (slow but identical), so results never depend on whether the JIT
is present.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def jacobi_eigh_kernel(a: np.ndarray, off_tol: float, max_sweeps: int):
    """Cyclic Jacobi rotations on a symmetric matrix until the off-diagonal
    Frobenius norm drops below ``off_tol``.  Returns (diag-in-a, U)."""
    n = a.shape[0]
    u = np.eye(n)
    for _ in range(max_sweeps):
        off2 = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off2 += a[p, q] * a[p, q]
        if np.sqrt(2.0 * off2) <= off_tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = 0.5 * (aqq - app) / apq
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                tau = s / (1.0 + c)
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    if k != p and k != q:
                        akp = a[k, p]
                        akq = a[k, q]
                        a[k, p] = akp - s * (akq + tau * akp)
                        a[p, k] = a[k, p]
                        a[k, q] = akq + s * (akp - tau * akq)
                        a[q, k] = a[k, q]
                for k in range(n):
                    ukp = u[k, p]
                    ukq = u[k, q]
                    u[k, p] = ukp - s * (ukq + tau * ukp)
                    u[k, q] = ukq + s * (ukp - tau * ukq)
    return a, u


@njit(cache=True)
def dijkstra_all_kernel(r: np.ndarray) -> np.ndarray:
    """Dense Dijkstra from every source on a non-negative weight matrix.

    ``r[u, v] = inf`` means no edge.  Returns the distance matrix.
    """
    n = r.shape[0]
    dist = np.full((n, n), np.inf)
    for s in range(n):
        d = dist[s]
        d[s] = 0.0
        done = np.zeros(n, dtype=np.bool_)
        for _ in range(n):
            u = -1
            best = np.inf
            for v in range(n):
                if not done[v] and d[v] < best:
                    best = d[v]
                    u = v
            if u < 0:
                break
            done[u] = True
            du = d[u]
            for v in range(n):
                w = r[u, v]
                if w != np.inf:
                    nd = du + w
                    if nd < d[v]:
                        d[v] = nd
    return dist


@njit(cache=True)
def next_hop_kernel(r: np.ndarray, dist: np.ndarray, tol: float) -> np.ndarray:
    """First hop of the lexicographically smallest shortest path per pair.

    nxt[u, j] is the smallest-index neighbor v of u with
    r[u, v] + dist[v, j] == dist[u, j] (within tol); -1 if unreachable,
    u itself when u == j.  Greedily following nxt yields the full path.
    """
    n = r.shape[0]
    nxt = np.full((n, n), -1, dtype=np.int64)
    for j in range(n):
        for u in range(n):
            if u == j:
                nxt[u, j] = u
                continue
            duj = dist[u, j]
            if duj == np.inf:
                continue
            for v in range(n):
                w = r[u, v]
                if w != np.inf and w + dist[v, j] <= duj + tol:
                    nxt[u, j] = v
                    break
    return nxt


@njit(cache=True)
def rspd_grad_kernel(
    g: np.ndarray,
    dist: np.ndarray,
    nxt: np.ndarray,
    atilde: np.ndarray,
) -> np.ndarray:
    """Pull an upstream gradient on the rspd matrix back onto the adjacency.

    Uses the fact that, per target j, the chosen next hops form a tree
    rooted at j: gradient mass accumulates from the leaves toward j, and
    each edge (u, v) on a used path receives mass * d(1/a)/da = -mass/a^2.
    """
    n = g.shape[0]
    grad_a = np.zeros((n, n))
    order = np.empty(n, dtype=np.int64)
    mass = np.empty(n)
    for j in range(n):
        col = dist[:, j]
        idx = np.argsort(col)  # ascending; process in reverse (far first)
        for k in range(n):
            order[k] = idx[k]
        for u in range(n):
            mass[u] = g[u, j]
        for k in range(n - 1, -1, -1):
            u = order[k]
            if u == j or col[u] == np.inf:
                continue
            v = nxt[u, j]
            if v < 0:
                continue
            m = mass[u]
            if m != 0.0:
                a = atilde[u, v]
                grad_a[u, v] += -m / (a * a)
                mass[v] += m
    return grad_a


def bfs_hops(adj: np.ndarray, edge_eps: float = 1e-9) -> np.ndarray:
    """All-pairs hop distances on the support of ``adj`` (vectorized BFS)."""
    conn = adj > edge_eps
    n = adj.shape[0]
    dist = np.full((n, n), np.inf)
    frontier = np.eye(n, dtype=bool)
    visited = frontier.copy()
    d = 0
    dist[frontier] = 0.0
    while frontier.any():
        d += 1
        frontier = (frontier @ conn) & ~visited
        dist[frontier] = d
        visited |= frontier
    return dist
