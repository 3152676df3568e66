"""Pure-Python/numpy versions of the hot kernels in ``_kernels.pyx``.

Each function visits work in the same order as its compiled twin so the two
backends return identical results, not merely close ones.
"""

import numpy as np

from ._mctables import CORNERS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE


def marching_cubes(values, iso):
    """Triangulate the ``iso`` level set of a ``(nz, ny, nx)`` lattice.

    Returns vertices in lattice units ``(x, y, z)`` and an ``(t, 3)`` index
    array.  Vertices are shared between cells through their lattice-edge key.
    """
    v = np.ascontiguousarray(values, dtype=np.float64)
    nz, ny, nx = v.shape
    below = v < iso
    case = np.zeros((nz - 1, ny - 1, nx - 1), dtype=np.int64)
    for c, (dx, dy, dz) in enumerate(CORNERS):
        case |= below[dz : dz + nz - 1, dy : dy + ny - 1, dx : dx + nx - 1].astype(np.int64) << c
    active = np.nonzero((case != 0) & (case != 255))

    weld: dict[int, int] = {}
    verts: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []
    for k, j, i in zip(*active):
        c = int(case[k, j, i])
        if EDGE_TABLE[c] == 0:
            continue
        local = [-1] * 12
        for e in range(12):
            if not (EDGE_TABLE[c] >> e) & 1:
                continue
            c0, c1 = EDGE_CORNERS[e]
            p0 = (i + CORNERS[c0][0], j + CORNERS[c0][1], k + CORNERS[c0][2])
            p1 = (i + CORNERS[c1][0], j + CORNERS[c1][1], k + CORNERS[c1][2])
            if p1 < p0:
                p0, p1 = p1, p0
            axis = 0 if p0[0] != p1[0] else (1 if p0[1] != p1[1] else 2)
            key = ((p0[2] * ny + p0[1]) * nx + p0[0]) * 3 + axis
            idx = weld.get(key)
            if idx is None:
                a = v[p0[2], p0[1], p0[0]]
                b = v[p1[2], p1[1], p1[0]]
                t = (iso - a) / (b - a)
                pos = [float(p0[0]), float(p0[1]), float(p0[2])]
                pos[axis] = p0[axis] + t
                idx = len(verts)
                weld[key] = idx
                verts.append((pos[0], pos[1], pos[2]))
            local[e] = idx
        row = TRI_TABLE[c]
        for s in range(0, 15, 3):
            if row[s] < 0:
                break
            tris.append((local[row[s]], local[row[s + 1]], local[row[s + 2]]))
    return (
        np.array(verts, dtype=np.float64).reshape(-1, 3),
        np.array(tris, dtype=np.int64).reshape(-1, 3),
    )


def hungarian(cost):
    """Minimum-cost perfect assignment on a square matrix; returns row -> column."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based, 0 = none)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assign = np.empty(n, dtype=np.int64)
    assign[p[1:] - 1] = np.arange(n)
    return assign


def _dist(a, b):
    d = a - b
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


def greedy_match(A, B, order):
    """Match each ``A[order[t]]`` in turn to its nearest still-free point of ``B``."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    n = len(A)
    taken = np.zeros(n, dtype=bool)
    assign = np.empty(n, dtype=np.int64)
    for i in order:
        d = np.where(taken, np.inf, _dist(A[i], B))
        j = int(np.argmin(d))
        taken[j] = True
        assign[i] = j
    return assign


def two_swap(A, B, assign, max_passes):
    """First-improvement 2-swap local search on a matching; returns (assign, passes run)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    assign = np.array(assign, dtype=np.int64)
    n = len(A)
    passes = 0
    while passes < max_passes:
        passes += 1
        improved = False
        for i in range(n - 1):
            start = i + 1
            while start < n:
                rest = assign[start:]
                d_i = _dist(A[i], B[assign[i]])
                cur = d_i + _dist(A[start:], B[rest])
                new = _dist(A[i], B[rest]) + _dist(A[start:], B[assign[i]])
                hits = np.nonzero(new < cur - 1e-12)[0]
                if hits.size == 0:
                    break
                j = start + int(hits[0])
                assign[i], assign[j] = assign[j], assign[i]
                improved = True
                start = j + 1
        if not improved:
            break
    return assign, passes


def kd_query(points, lo, hi, split_dim, split_val, left, right, queries):
    """Nearest neighbour of each query in a flattened k-d tree.

    Returns squared distances and indices into ``points`` (the tree's own
    permuted point order).
    """
    queries = np.asarray(queries, dtype=np.float64)
    out_d = np.empty(len(queries))
    out_i = np.empty(len(queries), dtype=np.int64)
    for q in range(len(queries)):
        x = queries[q]
        best = np.inf
        best_i = -1
        stack = [(0, 0.0)]
        while stack:
            node, bound = stack.pop()
            if bound >= best:
                continue
            if left[node] < 0:
                seg = points[lo[node] : hi[node]] - x
                d2 = seg[:, 0] * seg[:, 0] + seg[:, 1] * seg[:, 1] + seg[:, 2] * seg[:, 2]
                k = int(np.argmin(d2))
                if d2[k] < best:
                    best = float(d2[k])
                    best_i = lo[node] + k
                continue
            diff = x[split_dim[node]] - split_val[node]
            near, far = (left[node], right[node]) if diff < 0 else (right[node], left[node])
            stack.append((far, diff * diff))
            stack.append((near, 0.0))
        out_d[q] = best
        out_i[q] = best_i
    return out_d, out_i
