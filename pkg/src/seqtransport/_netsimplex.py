"""Primal network simplex for the dense transportation problem.

The basis is a spanning tree on ``m`` row nodes and ``k`` column nodes with
``m + k - 1`` basic cells. Start from the north-west corner rule, price cells
in blocks (Dantzig rule within a block), and pivot around the unique cycle
the entering cell closes in the tree. Every iterate is a basic feasible
solution, so the returned plan is a vertex of the transportation polytope.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _solve(C, a, b, max_iter, tol):
    m, k = C.shape
    nb = m + k - 1
    N = m + k
    brow = np.empty(nb, np.int64)
    bcol = np.empty(nb, np.int64)
    flow = np.empty(nb)

    # north-west corner: walks from (0, 0) to (m-1, k-1), one step at a time
    ra = a.copy()
    rb = b.copy()
    i = 0
    j = 0
    e = 0
    while True:
        x = min(ra[i], rb[j])
        if x < 0.0:
            x = 0.0
        brow[e] = i
        bcol[e] = j
        flow[e] = x
        e += 1
        ra[i] -= x
        rb[j] -= x
        if i == m - 1 and j == k - 1:
            break
        if j == k - 1 or (i < m - 1 and ra[i] <= rb[j]):
            i += 1
        else:
            j += 1

    pot = np.empty(N)
    parent = np.empty(N, np.int64)
    parent_arc = np.empty(N, np.int64)
    depth = np.empty(N, np.int64)
    deg = np.empty(N, np.int64)
    head = np.empty(N + 1, np.int64)
    fill = np.empty(N, np.int64)
    adj = np.empty(2 * nb, np.int64)
    queue = np.empty(N, np.int64)
    side_x = np.empty(N, np.int64)
    side_y = np.empty(N, np.int64)

    total = m * k
    block = max(int(np.sqrt(total)), 10)
    pos = 0
    it = 0
    status = 1  # 0 optimal, 1 iteration limit
    while it < max_iter:
        # potentials from the current tree, rooted at row 0
        for n in range(N):
            deg[n] = 0
            depth[n] = -1
        for e in range(nb):
            deg[brow[e]] += 1
            deg[m + bcol[e]] += 1
        head[0] = 0
        for n in range(N):
            head[n + 1] = head[n] + deg[n]
            fill[n] = head[n]
        for e in range(nb):
            r = brow[e]
            c = m + bcol[e]
            adj[fill[r]] = e
            fill[r] += 1
            adj[fill[c]] = e
            fill[c] += 1
        depth[0] = 0
        parent[0] = -1
        parent_arc[0] = -1
        pot[0] = 0.0
        qh = 0
        qt = 1
        queue[0] = 0
        while qh < qt:
            n = queue[qh]
            qh += 1
            for t in range(head[n], head[n + 1]):
                e = adj[t]
                if n < m:
                    other = m + bcol[e]
                else:
                    other = brow[e]
                if depth[other] >= 0:
                    continue
                depth[other] = depth[n] + 1
                parent[other] = n
                parent_arc[other] = e
                # reduced cost of a basic cell is zero: C[r, c] = u_r + v_c
                pot[other] = C[brow[e], bcol[e]] - pot[n]
                queue[qt] = other
                qt += 1

        # block pricing
        best = -tol
        bi = -1
        bj = -1
        scanned = 0
        count = 0
        p = pos
        while scanned < total:
            i = p // k
            j = p - i * k
            rc = C[i, j] - pot[i] - pot[m + j]
            if rc < best:
                best = rc
                bi = i
                bj = j
            p += 1
            if p == total:
                p = 0
            scanned += 1
            count += 1
            if count == block:
                if bi >= 0:
                    break
                count = 0
        pos = p
        if bi < 0:
            status = 0
            break
        it += 1

        # cycle closed by (bi, bj): tree path from column node to row node
        x = m + bj
        y = bi
        nx = 0
        ny = 0
        while x != y:
            if depth[x] >= depth[y]:
                side_x[nx] = parent_arc[x]
                nx += 1
                x = parent[x]
            else:
                side_y[ny] = parent_arc[y]
                ny += 1
                y = parent[y]
        # arcs at even distance from either end of the path lose flow
        theta = np.inf
        leave = -1
        for d in range(0, nx, 2):
            if flow[side_x[d]] < theta:
                theta = flow[side_x[d]]
                leave = side_x[d]
        for d in range(0, ny, 2):
            if flow[side_y[d]] < theta:
                theta = flow[side_y[d]]
                leave = side_y[d]
        for d in range(nx):
            if d % 2 == 0:
                flow[side_x[d]] -= theta
            else:
                flow[side_x[d]] += theta
        for d in range(ny):
            if d % 2 == 0:
                flow[side_y[d]] -= theta
            else:
                flow[side_y[d]] += theta
        brow[leave] = bi
        bcol[leave] = bj
        flow[leave] = theta

    plan = np.zeros((m, k))
    for e in range(nb):
        f = flow[e]
        if f > 0.0:
            plan[brow[e], bcol[e]] += f
    return plan, it, status


def network_simplex(C: np.ndarray, a: np.ndarray, b: np.ndarray, max_iter: int | None = None):
    """Return ``(plan, n_pivots, optimal)`` for ``min <P, C>`` over ``U(a, b)``.

    ``a`` and ``b`` must have equal sums; callers drop zero-mass rows and
    columns beforehand.
    """
    C = np.ascontiguousarray(C, dtype=np.float64)
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    m, k = C.shape
    if max_iter is None:
        max_iter = 50 * (m + k) * max(10, int(np.log2(m * k + 1))) + 1000
    scale = float(np.abs(C).max()) if C.size else 0.0
    tol = 1e-12 * (1.0 + scale)
    # Rows grouped by their cheapest column, most decided first, make the
    # north-west corner start close to the greedy assignment.
    best = np.argmin(C, axis=1)
    margin = C[np.arange(m), best] - C.mean(axis=1)
    order = np.lexsort((margin, best))
    plan, it, status = _solve(np.ascontiguousarray(C[order]), a[order], b, max_iter, tol)
    out = np.empty_like(plan)
    out[order] = plan
    return out, int(it), status == 0
