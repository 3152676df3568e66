# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: marching cubes, assignment, EMD matching, k-d tree queries.

Signatures and visit order mirror ``_fallback.py`` exactly.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

from ._mctables import CORNERS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE

cnp.import_array()

cdef long[:, ::1] _CORNERS = np.ascontiguousarray(CORNERS, dtype=np.int_)
cdef long[:, ::1] _EDGE_CORNERS = np.ascontiguousarray(EDGE_CORNERS, dtype=np.int_)
cdef long[::1] _EDGE_TABLE = np.ascontiguousarray(EDGE_TABLE, dtype=np.int_)
cdef long[:, ::1] _TRI_TABLE = np.ascontiguousarray(TRI_TABLE, dtype=np.int_)


def marching_cubes(values, double iso):
    cdef double[:, :, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t nz = v.shape[0], ny = v.shape[1], nx = v.shape[2]
    cdef long[::1] weld = np.full(nz * ny * nx * 3, -1, dtype=np.int_)
    cdef Py_ssize_t cap = 1024, nv = 0, ntri = 0, tcap = 1024
    cdef double[:, ::1] verts = np.empty((cap, 3))
    cdef long[:, ::1] tris = np.empty((tcap, 3), dtype=np.int_)
    cdef long local[12]
    cdef Py_ssize_t i, j, k, c, e, s, axis
    cdef long key, idx
    cdef long p0[3]
    cdef long p1[3]
    cdef long tmp
    cdef double a, b, t
    cdef int case

    for k in range(nz - 1):
        for j in range(ny - 1):
            for i in range(nx - 1):
                case = 0
                for c in range(8):
                    if v[k + _CORNERS[c, 2], j + _CORNERS[c, 1], i + _CORNERS[c, 0]] < iso:
                        case |= 1 << c
                if case == 0 or case == 255 or _EDGE_TABLE[case] == 0:
                    continue
                for e in range(12):
                    local[e] = -1
                    if not ((_EDGE_TABLE[case] >> e) & 1):
                        continue
                    c = _EDGE_CORNERS[e, 0]
                    p0[0] = i + _CORNERS[c, 0]; p0[1] = j + _CORNERS[c, 1]; p0[2] = k + _CORNERS[c, 2]
                    c = _EDGE_CORNERS[e, 1]
                    p1[0] = i + _CORNERS[c, 0]; p1[1] = j + _CORNERS[c, 1]; p1[2] = k + _CORNERS[c, 2]
                    if p0[0] != p1[0]:
                        axis = 0
                    elif p0[1] != p1[1]:
                        axis = 1
                    else:
                        axis = 2
                    if p1[axis] < p0[axis]:
                        tmp = p0[axis]; p0[axis] = p1[axis]; p1[axis] = tmp
                    key = ((p0[2] * ny + p0[1]) * nx + p0[0]) * 3 + axis
                    idx = weld[key]
                    if idx < 0:
                        a = v[p0[2], p0[1], p0[0]]
                        b = v[p1[2], p1[1], p1[0]]
                        t = (iso - a) / (b - a)
                        if nv == cap:
                            cap *= 2
                            grown = np.empty((cap, 3))
                            grown[:nv] = verts[:nv]
                            verts = grown
                        verts[nv, 0] = p0[0]
                        verts[nv, 1] = p0[1]
                        verts[nv, 2] = p0[2]
                        verts[nv, axis] = p0[axis] + t
                        idx = nv
                        weld[key] = idx
                        nv += 1
                    local[e] = idx
                for s in range(0, 15, 3):
                    if _TRI_TABLE[case, s] < 0:
                        break
                    if ntri == tcap:
                        tcap *= 2
                        grown_t = np.empty((tcap, 3), dtype=np.int_)
                        grown_t[:ntri] = tris[:ntri]
                        tris = grown_t
                    tris[ntri, 0] = local[_TRI_TABLE[case, s]]
                    tris[ntri, 1] = local[_TRI_TABLE[case, s + 1]]
                    tris[ntri, 2] = local[_TRI_TABLE[case, s + 2]]
                    ntri += 1
    return (
        np.asarray(verts[:nv]).copy(),
        np.asarray(tris[:ntri]).astype(np.int64),
    )


def hungarian(cost_in):
    cdef double[:, ::1] cost = np.ascontiguousarray(cost_in, dtype=np.float64)
    cdef Py_ssize_t n = cost.shape[0]
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(n + 1)
    cdef double[::1] minv = np.empty(n + 1)
    cdef long[::1] p = np.zeros(n + 1, dtype=np.int_)
    cdef long[::1] way = np.zeros(n + 1, dtype=np.int_)
    cdef char[::1] used = np.zeros(n + 1, dtype=np.int8)
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assign = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        assign[p[j] - 1] = j - 1
    return assign


cdef inline double _dist(double[:, ::1] A, Py_ssize_t i, double[:, ::1] B, Py_ssize_t j) nogil:
    cdef double dx = A[i, 0] - B[j, 0]
    cdef double dy = A[i, 1] - B[j, 1]
    cdef double dz = A[i, 2] - B[j, 2]
    return sqrt(dx * dx + dy * dy + dz * dz)


def greedy_match(A_in, B_in, order_in):
    cdef double[:, ::1] A = np.ascontiguousarray(A_in, dtype=np.float64)
    cdef double[:, ::1] B = np.ascontiguousarray(B_in, dtype=np.float64)
    cdef long[::1] order = np.ascontiguousarray(order_in, dtype=np.int_)
    cdef Py_ssize_t n = A.shape[0], t, i, j, best_j
    cdef char[::1] taken = np.zeros(n, dtype=np.int8)
    cdef long[::1] assign = np.empty(n, dtype=np.int_)
    cdef double d, best
    with nogil:
        for t in range(n):
            i = order[t]
            best = INFINITY
            best_j = -1
            for j in range(n):
                if taken[j]:
                    continue
                d = _dist(A, i, B, j)
                if d < best:
                    best = d
                    best_j = j
            taken[best_j] = 1
            assign[i] = best_j
    return np.asarray(assign).astype(np.int64)


def two_swap(A_in, B_in, assign_in, int max_passes):
    cdef double[:, ::1] A = np.ascontiguousarray(A_in, dtype=np.float64)
    cdef double[:, ::1] B = np.ascontiguousarray(B_in, dtype=np.float64)
    cdef long[::1] assign = np.array(assign_in, dtype=np.int_)
    cdef Py_ssize_t n = A.shape[0], i, j
    cdef long tmp
    cdef int passes = 0
    cdef bint improved
    cdef double cur, new
    with nogil:
        while passes < max_passes:
            passes += 1
            improved = False
            for i in range(n - 1):
                for j in range(i + 1, n):
                    cur = _dist(A, i, B, assign[i]) + _dist(A, j, B, assign[j])
                    new = _dist(A, i, B, assign[j]) + _dist(A, j, B, assign[i])
                    if new < cur - 1e-12:
                        tmp = assign[i]
                        assign[i] = assign[j]
                        assign[j] = tmp
                        improved = True
            if not improved:
                break
    return np.asarray(assign).astype(np.int64), passes


def kd_query(points_in, lo_in, hi_in, split_dim_in, split_val_in, left_in, right_in, queries_in):
    cdef double[:, ::1] pts = np.ascontiguousarray(points_in, dtype=np.float64)
    cdef long[::1] lo = np.ascontiguousarray(lo_in, dtype=np.int_)
    cdef long[::1] hi = np.ascontiguousarray(hi_in, dtype=np.int_)
    cdef long[::1] sdim = np.ascontiguousarray(split_dim_in, dtype=np.int_)
    cdef double[::1] sval = np.ascontiguousarray(split_val_in, dtype=np.float64)
    cdef long[::1] left = np.ascontiguousarray(left_in, dtype=np.int_)
    cdef long[::1] right = np.ascontiguousarray(right_in, dtype=np.int_)
    cdef double[:, ::1] qs = np.ascontiguousarray(queries_in, dtype=np.float64)
    cdef Py_ssize_t nq = qs.shape[0], q, top, m
    cdef double[::1] out_d = np.empty(nq)
    cdef long[::1] out_i = np.empty(nq, dtype=np.int_)
    cdef Py_ssize_t cap = 2 * (left.shape[0] + 1)
    cdef long[::1] stack_node = np.empty(cap, dtype=np.int_)
    cdef double[::1] stack_bound = np.empty(cap)
    cdef long node, near, far
    cdef double best, bound, diff, dx, dy, dz, d2
    cdef long best_i
    with nogil:
        for q in range(nq):
            best = INFINITY
            best_i = -1
            top = 0
            stack_node[0] = 0
            stack_bound[0] = 0.0
            top = 1
            while top > 0:
                top -= 1
                node = stack_node[top]
                bound = stack_bound[top]
                if bound >= best:
                    continue
                if left[node] < 0:
                    for m in range(lo[node], hi[node]):
                        dx = pts[m, 0] - qs[q, 0]
                        dy = pts[m, 1] - qs[q, 1]
                        dz = pts[m, 2] - qs[q, 2]
                        d2 = dx * dx + dy * dy + dz * dz
                        if d2 < best:
                            best = d2
                            best_i = m
                    continue
                diff = qs[q, sdim[node]] - sval[node]
                if diff < 0:
                    near = left[node]
                    far = right[node]
                else:
                    near = right[node]
                    far = left[node]
                stack_node[top] = far
                stack_bound[top] = diff * diff
                top += 1
                stack_node[top] = near
                stack_bound[top] = 0.0
                top += 1
            out_d[q] = best
            out_i[q] = best_i
    return np.asarray(out_d), np.asarray(out_i).astype(np.int64)
