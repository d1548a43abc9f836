# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: transportation simplex and scaled nearest-prototype search.

Mirrors ``_pyfallback`` operation for operation; see there for semantics.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

cdef long long DEGENERATE_RUN = 50


def network_simplex(cost, supply, demand, long long max_iter=1_000_000):
    cdef const double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0], m = c.shape[1]
    cdef Py_ssize_t nodes = n + m, nb = n + m - 1
    cdef long long[::1] s = np.array(supply, dtype=np.int64)
    cdef long long[::1] d = np.array(demand, dtype=np.int64)

    flow_arr = np.zeros((n, m), dtype=np.int64)
    basic_arr = np.zeros((n, m), dtype=np.uint8)
    cdef long long[:, ::1] flow = flow_arr
    cdef unsigned char[:, ::1] basic = basic_arr
    cdef Py_ssize_t[::1] cell_i = np.empty(nb, dtype=np.intp)
    cdef Py_ssize_t[::1] cell_j = np.empty(nb, dtype=np.intp)

    cdef Py_ssize_t[::1] deg = np.empty(nodes + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] fill = np.empty(nodes, dtype=np.intp)
    cdef Py_ssize_t[::1] adj = np.empty(2 * nb, dtype=np.intp)
    cdef double[::1] pot = np.empty(nodes, dtype=np.float64)
    cdef Py_ssize_t[::1] parent = np.empty(nodes, dtype=np.intp)
    cdef Py_ssize_t[::1] pedge = np.empty(nodes, dtype=np.intp)
    cdef Py_ssize_t[::1] depth = np.empty(nodes, dtype=np.intp)
    cdef Py_ssize_t[::1] queue = np.empty(nodes, dtype=np.intp)
    cdef unsigned char[::1] seen = np.empty(nodes, dtype=np.uint8)
    cdef Py_ssize_t[::1] path_a = np.empty(nodes, dtype=np.intp)
    cdef Py_ssize_t[::1] path_b = np.empty(nodes, dtype=np.intp)
    cdef Py_ssize_t[::1] path = np.empty(nodes, dtype=np.intp)

    cdef Py_ssize_t i = 0, j = 0, k, nc = 0, node, other, head, tail, q, bi, bj
    cdef Py_ssize_t ei, ej, a, b, na, nbp, plen, pos, leave
    cdef long long x, f, theta, lkey, key
    cdef double cmax = 0.0, tol, ui, r, best
    cdef long long it = 0, degenerate = 0
    cdef bint bland

    while True:
        x = s[i] if s[i] < d[j] else d[j]
        flow[i, j] = x
        basic[i, j] = 1
        cell_i[nc] = i
        cell_j[nc] = j
        nc += 1
        s[i] -= x
        d[j] -= x
        if i == n - 1 and j == m - 1:
            break
        if s[i] == 0 and i < n - 1:
            i += 1
        else:
            j += 1

    for i in range(n):
        for j in range(m):
            if fabs(c[i, j]) > cmax:
                cmax = fabs(c[i, j])
    tol = 1e-11 * cmax

    while True:
        # CSR adjacency of the basis tree, edges in cell-list order
        for node in range(nodes + 1):
            deg[node] = 0
        for k in range(nb):
            deg[cell_i[k] + 1] += 1
            deg[n + cell_j[k] + 1] += 1
        for node in range(nodes):
            deg[node + 1] += deg[node]
            fill[node] = deg[node]
        for k in range(nb):
            adj[fill[cell_i[k]]] = k
            fill[cell_i[k]] += 1
            adj[fill[n + cell_j[k]]] = k
            fill[n + cell_j[k]] += 1

        for node in range(nodes):
            seen[node] = 0
        pot[0] = 0.0
        parent[0] = -1
        pedge[0] = -1
        depth[0] = 0
        seen[0] = 1
        queue[0] = 0
        head = 0
        tail = 1
        while head < tail:
            node = queue[head]
            head += 1
            for q in range(deg[node], deg[node + 1]):
                k = adj[q]
                bi = cell_i[k]
                bj = cell_j[k]
                if node < n:
                    other = n + bj
                else:
                    other = bi
                if seen[other]:
                    continue
                seen[other] = 1
                pot[other] = c[bi, bj] - pot[node]
                parent[other] = node
                pedge[other] = k
                depth[other] = depth[node] + 1
                queue[tail] = other
                tail += 1

        ei = -1
        ej = -1
        bland = degenerate >= DEGENERATE_RUN
        best = -tol
        for i in range(n):
            ui = pot[i]
            for j in range(m):
                if not basic[i, j]:
                    r = c[i, j] - ui - pot[n + j]
                    if r < best:
                        ei = i
                        ej = j
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

        a = n + ej
        b = ei
        na = 0
        nbp = 0
        while depth[a] > depth[b]:
            path_a[na] = pedge[a]
            na += 1
            a = parent[a]
        while depth[b] > depth[a]:
            path_b[nbp] = pedge[b]
            nbp += 1
            b = parent[b]
        while a != b:
            path_a[na] = pedge[a]
            na += 1
            a = parent[a]
            path_b[nbp] = pedge[b]
            nbp += 1
            b = parent[b]
        plen = 0
        for pos in range(na):
            path[plen] = path_a[pos]
            plen += 1
        for pos in range(nbp - 1, -1, -1):
            path[plen] = path_b[pos]
            plen += 1

        leave = -1
        theta = 0
        lkey = 0
        for pos in range(0, plen, 2):
            k = path[pos]
            f = flow[cell_i[k], cell_j[k]]
            key = cell_i[k] * m + cell_j[k]
            if leave < 0 or f < theta or (f == theta and key < lkey):
                leave = k
                theta = f
                lkey = key
        if theta:
            degenerate = 0
            flow[ei, ej] += theta
            for pos in range(plen):
                k = path[pos]
                if pos % 2:
                    flow[cell_i[k], cell_j[k]] += theta
                else:
                    flow[cell_i[k], cell_j[k]] -= theta
        else:
            degenerate += 1
        basic[cell_i[leave], cell_j[leave]] = 0
        basic[ei, ej] = 1
        cell_i[leave] = ei
        cell_j[leave] = ej

    return flow_arr, basic_arr.astype(bool), it


def nearest_scaled(queries, prototypes, scale):
    cdef const double[:, ::1] qv = np.ascontiguousarray(queries, dtype=np.float64)
    cdef const double[:, ::1] pv = np.ascontiguousarray(prototypes, dtype=np.float64)
    cdef const double[::1] sv = np.ascontiguousarray(scale, dtype=np.float64)
    cdef Py_ssize_t nq = qv.shape[0], npr = pv.shape[0], dim = qv.shape[1]
    idx_arr = np.empty(nq, dtype=np.int64)
    best_arr = np.empty(nq, dtype=np.float64)
    cdef long long[::1] idx = idx_arr
    cdef double[::1] best = best_arr
    cdef Py_ssize_t r, k, t, kbest
    cdef double acc, diff, dist, dbest
    with nogil:
        for r in range(nq):
            kbest = 0
            dbest = 0.0
            for k in range(npr):
                acc = 0.0
                for t in range(dim):
                    diff = pv[k, t] - qv[r, t]
                    acc = acc + diff * diff
                dist = sqrt(acc) * sv[k]
                if k == 0 or dist < dbest:
                    dbest = dist
                    kbest = k
            idx[r] = kbest
            best[r] = dbest
    return idx_arr, best_arr
