"""Pure-Python versions of the compiled kernels in ``_core.pyx``.

Both implementations follow the same pivot sequence and floating-point
operation order, so they return identical plans.
"""

import numpy as np

DEGENERATE_RUN = 50


def network_simplex(cost, supply, demand, max_iter=1_000_000):
    """Transportation simplex on integer supplies/demands.

    Starts from the north-west corner basis.  The entering cell is the most
    negative reduced cost (Dantzig), except after ``DEGENERATE_RUN``
    consecutive degenerate pivots, when Bland's rule (first improving cell
    in row-major order) takes over until a pivot moves flow again.  Leaving
    ties always go to the lowest cell index.

    Returns ``(flow, basic, iterations)`` where ``basic`` is an ``(n, m)``
    boolean mask of the final spanning-tree basis.
    ``iterations == -1`` signals the pivot cap was hit.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n, m = cost.shape
    c = cost.tolist()
    s = [int(v) for v in supply]
    d = [int(v) for v in demand]

    flow = [[0] * m for _ in range(n)]
    basic = [[False] * m for _ in range(n)]
    cells = []
    i = j = 0
    while True:
        x = min(s[i], d[j])
        flow[i][j] = x
        basic[i][j] = True
        cells.append((i, j))
        s[i] -= x
        d[j] -= x
        if i == n - 1 and j == m - 1:
            break
        if s[i] == 0 and i < n - 1:
            i += 1
        else:
            j += 1

    cmax = max((abs(v) for row in c for v in row), default=0.0)
    tol = 1e-11 * cmax
    nodes = n + m
    it = 0
    degenerate = 0
    while True:
        adj = [[] for _ in range(nodes)]
        for k, (bi, bj) in enumerate(cells):
            adj[bi].append(k)
            adj[n + bj].append(k)
        pot = [0.0] * nodes
        parent = [-1] * nodes
        pedge = [-1] * nodes
        depth = [0] * nodes
        seen = [False] * nodes
        seen[0] = True
        queue = [0]
        for node in queue:
            for k in adj[node]:
                bi, bj = cells[k]
                if node < n:
                    other = n + bj
                else:
                    other = bi
                if seen[other]:
                    continue
                seen[other] = True
                pot[other] = c[bi][bj] - pot[node]
                parent[other] = node
                pedge[other] = k
                depth[other] = depth[node] + 1
                queue.append(other)

        ei = ej = -1
        bland = degenerate >= DEGENERATE_RUN
        best = -tol
        for i in range(n):
            ui = pot[i]
            ci = c[i]
            bi_row = basic[i]
            for j in range(m):
                if not bi_row[j]:
                    r = ci[j] - ui - pot[n + j]
                    if r < best:
                        ei, ej = i, j
                        if bland:
                            break
                        best = r
            if bland and ei >= 0:
                break
        if ei < 0:
            break
        if it >= max_iter:
            it = -1
            break
        it += 1

        a, b = n + ej, ei
        path_a, path_b = [], []
        while depth[a] > depth[b]:
            path_a.append(pedge[a])
            a = parent[a]
        while depth[b] > depth[a]:
            path_b.append(pedge[b])
            b = parent[b]
        while a != b:
            path_a.append(pedge[a])
            a = parent[a]
            path_b.append(pedge[b])
            b = parent[b]
        path = path_a + path_b[::-1]

        leave = -1
        theta = 0
        for pos in range(0, len(path), 2):
            k = path[pos]
            bi, bj = cells[k]
            f = flow[bi][bj]
            if leave < 0 or f < theta or (f == theta and bi * m + bj < lkey):
                leave, theta, lkey = k, f, bi * m + bj
        if theta:
            degenerate = 0
            flow[ei][ej] += theta
            for pos, k in enumerate(path):
                bi, bj = cells[k]
                flow[bi][bj] += theta if pos % 2 else -theta
        else:
            degenerate += 1
        li, lj = cells[leave]
        basic[li][lj] = False
        basic[ei][ej] = True
        cells[leave] = (ei, ej)

    return (np.array(flow, dtype=np.int64), np.array(basic, dtype=bool), it)


def nearest_scaled(queries, prototypes, scale):
    """Index and scaled distance of the nearest prototype for each query.

    The distance to prototype ``k`` is ``scale[k] * ||q - p_k||``.  Ties go
    to the lowest prototype index.
    """
    q = np.ascontiguousarray(queries, dtype=np.float64)
    p = np.ascontiguousarray(prototypes, dtype=np.float64)
    scale = np.ascontiguousarray(scale, dtype=np.float64)
    idx = np.empty(q.shape[0], dtype=np.int64)
    best = np.empty(q.shape[0], dtype=np.float64)
    for r in range(q.shape[0]):
        diff = p - q[r]
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff)) * scale
        k = int(np.argmin(dist))
        idx[r] = k
        best[r] = dist[k]
    return idx, best
