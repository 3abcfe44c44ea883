"""Network simplex for the dense transportation problem.

The basis is a spanning tree of the complete bipartite graph with ``m + n - 1``
arcs (degenerate zero-flow arcs included). Entering and leaving arcs are
chosen by Bland's smallest-index rule, which rules out cycling.
"""

from collections import deque

import numpy as np

from .errors import SolverError


def northwest_corner(a, b):
    """Initial basic feasible solution and its (possibly degenerate) basis."""
    m, n = len(a), len(b)
    ar = np.array(a, dtype=np.float64)
    br = np.array(b, dtype=np.float64)
    x = np.zeros((m, n))
    basis = []
    i = j = 0
    while True:
        q = min(ar[i], br[j])
        x[i, j] = q
        basis.append((i, j))
        ar[i] -= q
        br[j] -= q
        if i == m - 1 and j == n - 1:
            break
        if j == n - 1 or (i < m - 1 and ar[i] <= br[j]):
            i += 1
        else:
            j += 1
    return x, basis


def _adjacency(basis, m, n):
    adj = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    return adj


def _potentials(C, adj, m, n):
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    seen = np.zeros(m + n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nb in adj[node]:
            if seen[nb]:
                continue
            seen[nb] = True
            if node < m:
                v[nb - m] = C[node, nb - m] - u[node]
            else:
                u[nb] = C[nb, node - m] - v[node - m]
            queue.append(nb)
    if not seen.all():
        raise SolverError("basis is not a spanning tree")
    return u, v


def _tree_path(adj, start, goal):
    parent = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nb in adj[node]:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path[::-1]


def transportation_simplex(a, b, C, max_iter=100_000):
    """Solve ``min <C, x>`` over nonnegative ``x`` with row sums ``a``, column sums ``b``.

    Returns ``(x, u, v, pivots)`` where ``u, v`` are optimal dual potentials
    with ``u[0] = 0``. ``sum(a)`` must equal ``sum(b)``; ``b`` is rescaled to
    absorb rounding differences.
    """
    C = np.asarray(C, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = C.shape
    b = b * (a.sum() / b.sum())
    x, basis = northwest_corner(a, b)
    in_basis = np.zeros((m, n), dtype=bool)
    for cell in basis:
        in_basis[cell] = True

    scale = max(1.0, float(np.abs(C).max())) if C.size else 1.0
    rc_tol = 1e-12 * scale
    for pivots in range(max_iter + 1):
        adj = _adjacency(basis, m, n)
        u, v = _potentials(C, adj, m, n)
        reduced = C - u[:, None] - v[None, :]
        reduced[in_basis] = 0.0
        candidates = np.flatnonzero(reduced.ravel() < -rc_tol)
        if candidates.size == 0:
            return x, u, v, pivots
        if pivots == max_iter:
            break
        ei, ej = divmod(int(candidates[0]), n)

        # cycle: entering arc (+), then the tree path col ej -> row ei,
        # whose arcs alternate -, +, -, ...
        path = _tree_path(adj, m + ej, ei)
        cells = []
        for k in range(len(path) - 1):
            p, q = path[k], path[k + 1]
            cells.append((q, p - m) if p >= m else (p, q - m))
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(x[c] for c in minus)
        leaving = min((c for c in minus if x[c] <= theta), key=lambda c: c[0] * n + c[1])

        for c in minus:
            x[c] = max(x[c] - theta, 0.0)
        for c in plus:
            x[c] += theta
        x[ei, ej] = theta
        x[leaving] = 0.0
        in_basis[leaving] = False
        in_basis[ei, ej] = True
        basis.remove(leaving)
        basis.append((ei, ej))
    raise SolverError(f"network simplex exceeded {max_iter} pivots")
