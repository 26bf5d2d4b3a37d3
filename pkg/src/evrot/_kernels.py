"""Compiled inner loops: hashing, voxel filtering, grid k-NN and ICP accumulation.

Everything here works on plain float64/int64 arrays; the public wrappers in
``spherical_map`` and ``icp`` own validation and types.
"""

import numpy as np
from numba import njit

_EMPTY = np.int64(-1)
_HASH_MUL = np.uint64(0x9E3779B97F4A7C15)


@njit(cache=True)
def _capacity(n):
    cap = 16
    while cap < 2 * n:
        cap *= 2
    return cap


@njit(cache=True)
def _slot(key, mask):
    h = np.uint64(key) * _HASH_MUL
    return np.int64((h >> np.uint64(17)) & np.uint64(mask))


@njit(cache=True)
def hash_lookup(table_keys, table_vals, key):
    mask = table_keys.shape[0] - 1
    s = _slot(key, mask)
    while True:
        k = table_keys[s]
        if k == key:
            return table_vals[s]
        if k == _EMPTY:
            return -1
        s = (s + 1) & mask


@njit(cache=True)
def group_keys(keys):
    """Dense group id per key, numbered by first appearance.

    Returns ``(group_of, group_key, table_keys, table_vals)``.
    """
    n = keys.shape[0]
    cap = _capacity(n)
    mask = cap - 1
    table_keys = np.full(cap, _EMPTY, dtype=np.int64)
    table_vals = np.full(cap, _EMPTY, dtype=np.int64)
    group_of = np.empty(n, dtype=np.int64)
    group_key = np.empty(n, dtype=np.int64)
    ng = 0
    for i in range(n):
        key = keys[i]
        s = _slot(key, mask)
        while True:
            k = table_keys[s]
            if k == key:
                group_of[i] = table_vals[s]
                break
            if k == _EMPTY:
                table_keys[s] = key
                table_vals[s] = ng
                group_key[ng] = key
                group_of[i] = ng
                ng += 1
                break
            s = (s + 1) & mask
    return group_of, group_key[:ng].copy(), table_keys, table_vals


@njit(cache=True)
def cell_coords(x, y, z, size, m):
    i = np.int64(np.floor((x + 1.0) / size))
    j = np.int64(np.floor((y + 1.0) / size))
    k = np.int64(np.floor((z + 1.0) / size))
    i = min(max(i, 0), m - 1)
    j = min(max(j, 0), m - 1)
    k = min(max(k, 0), m - 1)
    return i, j, k


@njit(cache=True)
def cell_keys(points, size, m):
    n = points.shape[0]
    out = np.empty(n, dtype=np.int64)
    for p in range(n):
        i, j, k = cell_coords(points[p, 0], points[p, 1], points[p, 2], size, m)
        out[p] = (i * m + j) * m + k
    return out


@njit(cache=True)
def voxel_downsample(points, size, m, min_norm):
    """Normalized bucket centroids in first-appearance order.

    Returns ``(out, n_dropped, n_snapped)``. A bucket whose centroid norm is
    below ``min_norm`` is dropped; a normalized centroid that falls outside
    its own bucket is snapped to the nearest member point of that bucket.
    """
    n = points.shape[0]
    keys = cell_keys(points, size, m)
    group_of, group_key, _, _ = group_keys(keys)
    ng = group_key.shape[0]
    sums = np.zeros((ng, 3))
    counts = np.zeros(ng, dtype=np.int64)
    for p in range(n):
        g = group_of[p]
        sums[g, 0] += points[p, 0]
        sums[g, 1] += points[p, 1]
        sums[g, 2] += points[p, 2]
        counts[g] += 1
    out = np.empty((ng, 3))
    keep = np.zeros(ng, dtype=np.bool_)
    snap = np.zeros(ng, dtype=np.bool_)
    n_dropped = 0
    n_snap = 0
    for g in range(ng):
        cx = sums[g, 0] / counts[g]
        cy = sums[g, 1] / counts[g]
        cz = sums[g, 2] / counts[g]
        nrm = np.sqrt(cx * cx + cy * cy + cz * cz)
        if nrm < min_norm:
            n_dropped += 1
            continue
        if counts[g] == 1:
            # single member: keep the point itself, not a re-rounded copy
            keep[g] = True
            continue
        qx = cx / nrm
        qy = cy / nrm
        qz = cz / nrm
        i, j, k = cell_coords(qx, qy, qz, size, m)
        out[g, 0] = qx
        out[g, 1] = qy
        out[g, 2] = qz
        keep[g] = True
        if (i * m + j) * m + k != group_key[g]:
            snap[g] = True
            n_snap += 1
    best = np.full(ng, np.inf)
    for p in range(n):
        g = group_of[p]
        if keep[g] and counts[g] == 1:
            out[g, 0] = points[p, 0]
            out[g, 1] = points[p, 1]
            out[g, 2] = points[p, 2]
    if n_snap > 0:
        target = out.copy()
        for p in range(n):
            g = group_of[p]
            if snap[g]:
                dx = points[p, 0] - target[g, 0]
                dy = points[p, 1] - target[g, 1]
                dz = points[p, 2] - target[g, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < best[g]:
                    best[g] = d2
                    out[g, 0] = points[p, 0]
                    out[g, 1] = points[p, 1]
                    out[g, 2] = points[p, 2]
    n_keep = 0
    for g in range(ng):
        if keep[g]:
            n_keep += 1
    res = np.empty((n_keep, 3))
    w = 0
    for g in range(ng):
        if keep[g]:
            res[w, 0] = out[g, 0]
            res[w, 1] = out[g, 1]
            res[w, 2] = out[g, 2]
            w += 1
    return res, n_dropped, n_snap


# --------------------------------------------------------------------------
# Uniform grid index with exact k-NN
# --------------------------------------------------------------------------


@njit(cache=True)
def build_grid(points, size, m):
    """CSR grid: ``(table_keys, table_vals, cell_start, cell_items, cell_points)``.

    Items inside a cell are in ascending point index; ``cell_points`` holds
    the coordinates in item order so a cell scan reads contiguous memory.
    """
    keys = cell_keys(points, size, m)
    group_of, group_key, table_keys, table_vals = group_keys(keys)
    ng = group_key.shape[0]
    cell_start = np.zeros(ng + 1, dtype=np.int64)
    for p in range(points.shape[0]):
        cell_start[group_of[p] + 1] += 1
    for g in range(ng):
        cell_start[g + 1] += cell_start[g]
    fill = cell_start[:-1].copy()
    items = np.empty(points.shape[0], dtype=np.int64)
    for p in range(points.shape[0]):
        g = group_of[p]
        items[fill[g]] = p
        fill[g] += 1
    cpts = np.empty((points.shape[0], 3))
    for t in range(points.shape[0]):
        cpts[t, 0] = points[items[t], 0]
        cpts[t, 1] = points[items[t], 1]
        cpts[t, 2] = points[items[t], 2]
    return table_keys, table_vals, cell_start, items, cpts


@njit(cache=True)
def _push(best_d, best_i, count, k, d2, idx):
    # keep (d2, idx) sorted ascending; ties go to the lower index
    if count == k:
        last = k - 1
        if d2 > best_d[last] or (d2 == best_d[last] and idx > best_i[last]):
            return count
        pos = last
    else:
        pos = count
        count += 1
    while pos > 0 and (best_d[pos - 1] > d2 or (best_d[pos - 1] == d2 and best_i[pos - 1] > idx)):
        best_d[pos] = best_d[pos - 1]
        best_i[pos] = best_i[pos - 1]
        pos -= 1
    best_d[pos] = d2
    best_i[pos] = idx
    return count


@njit(cache=True)
def knn_one(qx, qy, qz, points, table_keys, table_vals, cell_start, items, cpts, size, m, k, gate2,
            max_ring, best_d, best_i):
    """Exact k-NN of one query; returns the number of neighbors found.

    Returns 0 when ``gate2`` is finite and the nearest point is provably
    farther than ``sqrt(gate2)``. Falls back to a linear scan when the ring
    search exceeds ``max_ring``.
    """
    n = points.shape[0]
    ci, cj, ck = cell_coords(qx, qy, qz, size, m)
    count = 0
    for r in range(max_ring + 1):
        for di in range(-r, r + 1):
            ii = ci + di
            if ii < 0 or ii >= m:
                continue
            adi = abs(di)
            for dj in range(-r, r + 1):
                jj = cj + dj
                if jj < 0 or jj >= m:
                    continue
                adj = abs(dj)
                for dk in range(-r, r + 1):
                    if adi != r and adj != r and abs(dk) != r:
                        continue
                    kk = ck + dk
                    if kk < 0 or kk >= m:
                        continue
                    if count == k:
                        # skip cells that cannot hold anything closer than the current k-th
                        bx = max((ii * size - 1.0) - qx, qx - ((ii + 1) * size - 1.0), 0.0)
                        by = max((jj * size - 1.0) - qy, qy - ((jj + 1) * size - 1.0), 0.0)
                        bz = max((kk * size - 1.0) - qz, qz - ((kk + 1) * size - 1.0), 0.0)
                        if bx * bx + by * by + bz * bz > best_d[k - 1] * (1.0 + 1e-9) + 1e-300:
                            continue
                    cell = hash_lookup(table_keys, table_vals, (ii * m + jj) * m + kk)
                    if cell < 0:
                        continue
                    for t in range(cell_start[cell], cell_start[cell + 1]):
                        dx = qx - cpts[t, 0]
                        dy = qy - cpts[t, 1]
                        dz = qz - cpts[t, 2]
                        count = _push(best_d, best_i, count, k, dx * dx + dy * dy + dz * dz, items[t])
        # distance from the query to the nearest face of the searched box
        reach = np.inf
        if ci - r > 0:
            reach = min(reach, qx + 1.0 - (ci - r) * size)
        if ci + r < m - 1:
            reach = min(reach, (ci + r + 1) * size - 1.0 - qx)
        if cj - r > 0:
            reach = min(reach, qy + 1.0 - (cj - r) * size)
        if cj + r < m - 1:
            reach = min(reach, (cj + r + 1) * size - 1.0 - qy)
        if ck - r > 0:
            reach = min(reach, qz + 1.0 - (ck - r) * size)
        if ck + r < m - 1:
            reach = min(reach, (ck + r + 1) * size - 1.0 - qz)
        reach = max(reach, 0.0)
        reach2 = reach * reach
        if count == k and best_d[k - 1] <= reach2:
            return count
        if reach2 >= gate2 and (count == 0 or best_d[0] > gate2):
            return 0
    count = 0
    for p in range(n):
        dx = qx - points[p, 0]
        dy = qy - points[p, 1]
        dz = qz - points[p, 2]
        count = _push(best_d, best_i, count, k, dx * dx + dy * dy + dz * dz, p)
    if count > 0 and best_d[0] > gate2:
        return 0
    return count


@njit(cache=True)
def knn_batch(queries, points, table_keys, table_vals, cell_start, items, cpts, size, m, k, gate2, max_ring):
    nq = queries.shape[0]
    idx = np.full((nq, k), -1, dtype=np.int64)
    dist2 = np.full((nq, k), np.inf)
    bd = np.empty(k)
    bi = np.empty(k, dtype=np.int64)
    for q in range(nq):
        c = knn_one(queries[q, 0], queries[q, 1], queries[q, 2], points, table_keys, table_vals,
                    cell_start, items, cpts, size, m, k, gate2, max_ring, bd, bi)
        for t in range(c):
            idx[q, t] = bi[t]
            dist2[q, t] = bd[t]
    return idx, dist2


@njit(cache=True)
def brute_knn(queries, points, k):
    """Linear-scan reference with the same tie rule (independent of the grid)."""
    nq = queries.shape[0]
    idx = np.full((nq, k), -1, dtype=np.int64)
    dist2 = np.full((nq, k), np.inf)
    bd = np.empty(k)
    bi = np.empty(k, dtype=np.int64)
    for q in range(nq):
        c = 0
        for p in range(points.shape[0]):
            dx = queries[q, 0] - points[p, 0]
            dy = queries[q, 1] - points[p, 1]
            dz = queries[q, 2] - points[p, 2]
            c = _push(bd, bi, c, k, dx * dx + dy * dy + dz * dz, p)
        for t in range(c):
            idx[q, t] = bi[t]
            dist2[q, t] = bd[t]
    return idx, dist2


# --------------------------------------------------------------------------
# Line fitting
# --------------------------------------------------------------------------


@njit(cache=True)
def sym3_eig(a00, a01, a02, a11, a12, a22, vecs):
    """Cyclic Jacobi on a symmetric 3x3; eigenvalues descending, vectors in columns of ``vecs``."""
    a = np.empty((3, 3))
    a[0, 0] = a00
    a[0, 1] = a01
    a[0, 2] = a02
    a[1, 0] = a01
    a[1, 1] = a11
    a[1, 2] = a12
    a[2, 0] = a02
    a[2, 1] = a12
    a[2, 2] = a22
    v = np.eye(3)
    for _sweep in range(50):
        off = a[0, 1] * a[0, 1] + a[0, 2] * a[0, 2] + a[1, 2] * a[1, 2]
        diag = a[0, 0] * a[0, 0] + a[1, 1] * a[1, 1] + a[2, 2] * a[2, 2]
        if off <= 1e-34 * diag or off == 0.0:
            break
        for p in range(2):
            for q in range(p + 1, 3):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for r in range(3):
                    arp = a[r, p]
                    arq = a[r, q]
                    a[r, p] = c * arp - s * arq
                    a[r, q] = s * arp + c * arq
                for r in range(3):
                    apr = a[p, r]
                    aqr = a[q, r]
                    a[p, r] = c * apr - s * aqr
                    a[q, r] = s * apr + c * aqr
                for r in range(3):
                    vrp = v[r, p]
                    vrq = v[r, q]
                    v[r, p] = c * vrp - s * vrq
                    v[r, q] = s * vrp + c * vrq
    w0 = a[0, 0]
    w1 = a[1, 1]
    w2 = a[2, 2]
    order = np.empty(3, dtype=np.int64)
    # descending sort of three values
    if w0 >= w1:
        if w1 >= w2:
            order[0], order[1], order[2] = 0, 1, 2
        elif w0 >= w2:
            order[0], order[1], order[2] = 0, 2, 1
        else:
            order[0], order[1], order[2] = 2, 0, 1
    else:
        if w0 >= w2:
            order[0], order[1], order[2] = 1, 0, 2
        elif w1 >= w2:
            order[0], order[1], order[2] = 1, 2, 0
        else:
            order[0], order[1], order[2] = 2, 1, 0
    w = np.empty(3)
    for c in range(3):
        o = order[c]
        w[c] = a[o, o]
        for r in range(3):
            vecs[r, c] = v[r, o]
    return w


@njit(cache=True)
def fit_line_kernel(nb, line_min, out_d, out_c, vecs):
    """Centroid + principal axis of the rows of ``nb``; False if degenerate."""
    kk = nb.shape[0]
    cx = 0.0
    cy = 0.0
    cz = 0.0
    for t in range(kk):
        cx += nb[t, 0]
        cy += nb[t, 1]
        cz += nb[t, 2]
    cx /= kk
    cy /= kk
    cz /= kk
    out_c[0] = cx
    out_c[1] = cy
    out_c[2] = cz
    s00 = s01 = s02 = s11 = s12 = s22 = 0.0
    for t in range(kk):
        x = nb[t, 0] - cx
        y = nb[t, 1] - cy
        z = nb[t, 2] - cz
        s00 += x * x
        s01 += x * y
        s02 += x * z
        s11 += y * y
        s12 += y * z
        s22 += z * z
    tr = s00 + s11 + s22
    # coincident points: spread below rounding noise of unit vectors
    if not tr > kk * 1e-24:
        return False
    w = sym3_eig(s00, s01, s02, s11, s12, s22, vecs)
    if w[0] / (w[0] + max(w[1], 0.0) + max(w[2], 0.0)) < line_min:
        return False
    dx = vecs[0, 0]
    dy = vecs[1, 0]
    dz = vecs[2, 0]
    nrm = np.sqrt(dx * dx + dy * dy + dz * dz)
    dx /= nrm
    dy /= nrm
    dz /= nrm
    first = dx
    if abs(dx) <= 1e-12:
        first = dy if abs(dy) > 1e-12 else dz
    if first < 0.0:
        dx, dy, dz = -dx, -dy, -dz
    out_d[0] = dx
    out_d[1] = dy
    out_d[2] = dz
    return True


# --------------------------------------------------------------------------
# ES-ICP normal equations
# --------------------------------------------------------------------------


@njit(cache=True)
def _accumulate_line(px, py, pz, qx, qy, qz, R, d, c, H, g):
    """Add one point-to-line term to ``H`` and ``g``; returns the squared residual."""
    ex = qx - c[0]
    ey = qy - c[1]
    ez = qz - c[2]
    rx = d[1] * ez - d[2] * ey
    ry = d[2] * ex - d[0] * ez
    rz = d[0] * ey - d[1] * ex
    # J = -hat(d) @ R @ hat(p), built column by column
    J = np.empty((3, 3))
    for col in range(3):
        if col == 0:
            hx, hy, hz = 0.0, pz, -py
        elif col == 1:
            hx, hy, hz = -pz, 0.0, px
        else:
            hx, hy, hz = py, -px, 0.0
        bx = R[0, 0] * hx + R[0, 1] * hy + R[0, 2] * hz
        by = R[1, 0] * hx + R[1, 1] * hy + R[1, 2] * hz
        bz = R[2, 0] * hx + R[2, 1] * hy + R[2, 2] * hz
        J[0, col] = -(d[1] * bz - d[2] * by)
        J[1, col] = -(d[2] * bx - d[0] * bz)
        J[2, col] = -(d[0] * by - d[1] * bx)
    for a in range(3):
        g[a] -= J[0, a] * rx + J[1, a] * ry + J[2, a] * rz
        for b in range(3):
            H[a, b] += J[0, a] * J[0, b] + J[1, a] * J[1, b] + J[2, a] * J[2, b]
    return rx * rx + ry * ry + rz * rz


@njit(cache=True)
def icp_accumulate(frame, R, points, table_keys, table_vals, cell_start, items, cpts, size, m, k,
                   gate2, line_min, max_ring):
    """One correspondence pass: returns ``(H, g, cost_sum, n_inlier, n_gated, n_degenerate)``.

    ``frame`` holds pre-rotation unit points; each is rotated by ``R``,
    matched to its k nearest map points, and contributes
    ``J = -hat(d) R hat(p)`` and ``r = d x (R p - c)`` when its nearest map
    point lies within the gate and the neighbors form a line.
    Sums run in frame order so results are reproducible.
    """
    H = np.zeros((3, 3))
    g = np.zeros(3)
    cost = 0.0
    n_in = 0
    n_gated = 0
    n_deg = 0
    bd = np.empty(k)
    bi = np.empty(k, dtype=np.int64)
    nb = np.empty((k, 3))
    d = np.empty(3)
    c = np.empty(3)
    vecs = np.empty((3, 3))
    for i in range(frame.shape[0]):
        px = frame[i, 0]
        py = frame[i, 1]
        pz = frame[i, 2]
        qx = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz
        qy = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz
        qz = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz
        cnt = knn_one(qx, qy, qz, points, table_keys, table_vals, cell_start, items, cpts, size, m, k,
                      gate2, max_ring, bd, bi)
        if cnt < k or bd[0] > gate2:
            n_gated += 1
            continue
        for t in range(k):
            nb[t, 0] = points[bi[t], 0]
            nb[t, 1] = points[bi[t], 1]
            nb[t, 2] = points[bi[t], 2]
        if not fit_line_kernel(nb, line_min, d, c, vecs):
            n_deg += 1
            continue
        cost += _accumulate_line(px, py, pz, qx, qy, qz, R, d, c, H, g)
        n_in += 1
    return H, g, cost, n_in, n_gated, n_deg


@njit(cache=True)
def icp_candidates(frame, R, points, table_keys, table_vals, cell_start, items, cpts, size, m, k,
                   gate, slack, max_ring):
    """Per-point candidate lists that stay exact while queries move at most ``slack``.

    For the query ``q0 = R p`` the list holds every map point within
    ``d_k(q0) + 2 slack`` of ``q0``, which contains the k nearest neighbors
    of any ``q`` with ``|q - q0| <= slack``. A point whose nearest map point
    is farther than ``gate + slack`` gets an empty list: it stays gated.
    Returns CSR arrays ``(start, idx)``.
    """
    n = frame.shape[0]
    start = np.zeros(n + 1, dtype=np.int64)
    cap = max(16, 24 * n)
    idx = np.empty(cap, dtype=np.int64)
    bd = np.empty(k)
    bi = np.empty(k, dtype=np.int64)
    outer = gate + slack
    outer2 = outer * outer
    w = 0
    for i in range(n):
        px = frame[i, 0]
        py = frame[i, 1]
        pz = frame[i, 2]
        qx = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz
        qy = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz
        qz = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz
        cnt = knn_one(qx, qy, qz, points, table_keys, table_vals, cell_start, items, cpts, size, m, k,
                      outer2, max_ring, bd, bi)
        if cnt < k or bd[0] > outer2:
            start[i + 1] = w
            continue
        rc = np.sqrt(bd[k - 1]) + 2.0 * slack + 1e-12
        rc2 = rc * rc
        i0, j0, k0 = cell_coords(qx - rc, qy - rc, qz - rc, size, m)
        i1, j1, k1 = cell_coords(qx + rc, qy + rc, qz + rc, size, m)
        for ii in range(i0, i1 + 1):
            for jj in range(j0, j1 + 1):
                for kk in range(k0, k1 + 1):
                    cell = hash_lookup(table_keys, table_vals, (ii * m + jj) * m + kk)
                    if cell < 0:
                        continue
                    for t in range(cell_start[cell], cell_start[cell + 1]):
                        p = items[t]
                        dx = qx - cpts[t, 0]
                        dy = qy - cpts[t, 1]
                        dz = qz - cpts[t, 2]
                        if dx * dx + dy * dy + dz * dz <= rc2:
                            if w == cap:
                                cap *= 2
                                grown = np.empty(cap, dtype=np.int64)
                                grown[:w] = idx[:w]
                                idx = grown
                            idx[w] = p
                            w += 1
        start[i + 1] = w
    return start, idx[:w].copy()


@njit(cache=True)
def icp_accumulate_cached(frame, R, points, cand_start, cand_idx, k, gate2, line_min):
    """:func:`icp_accumulate` with neighbors drawn from :func:`icp_candidates` lists.

    Gives bit-identical sums as long as every rotated point lies within the
    slack the lists were built with.
    """
    H = np.zeros((3, 3))
    g = np.zeros(3)
    cost = 0.0
    n_in = 0
    n_gated = 0
    n_deg = 0
    bd = np.empty(k)
    bi = np.empty(k, dtype=np.int64)
    nb = np.empty((k, 3))
    d = np.empty(3)
    c = np.empty(3)
    vecs = np.empty((3, 3))
    for i in range(frame.shape[0]):
        px = frame[i, 0]
        py = frame[i, 1]
        pz = frame[i, 2]
        qx = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz
        qy = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz
        qz = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz
        cnt = 0
        for t in range(cand_start[i], cand_start[i + 1]):
            p = cand_idx[t]
            dx = qx - points[p, 0]
            dy = qy - points[p, 1]
            dz = qz - points[p, 2]
            cnt = _push(bd, bi, cnt, k, dx * dx + dy * dy + dz * dz, p)
        if cnt < k or bd[0] > gate2:
            n_gated += 1
            continue
        for t in range(k):
            nb[t, 0] = points[bi[t], 0]
            nb[t, 1] = points[bi[t], 1]
            nb[t, 2] = points[bi[t], 2]
        if not fit_line_kernel(nb, line_min, d, c, vecs):
            n_deg += 1
            continue
        cost += _accumulate_line(px, py, pz, qx, qy, qz, R, d, c, H, g)
        n_in += 1
    return H, g, cost, n_in, n_gated, n_deg


# --------------------------------------------------------------------------
# Event simulation
# --------------------------------------------------------------------------


@njit(cache=True)
def project_pixel(x, y, z, cam):
    """Distorted pixel of a camera-frame direction (``cam`` = fx fy cx cy k1 k2 p1 p2 k3)."""
    xn = x / z
    yn = y / z
    r2 = xn * xn + yn * yn
    radial = 1.0 + r2 * (cam[4] + r2 * (cam[5] + r2 * cam[8]))
    xd = xn * radial + 2.0 * cam[6] * xn * yn + cam[7] * (r2 + 2.0 * xn * xn)
    yd = yn * radial + cam[6] * (r2 + 2.0 * yn * yn) + 2.0 * cam[7] * xn * yn
    return cam[0] * xd + cam[2], cam[1] * yd + cam[3]


@njit(cache=True)
def simulate_chunk(L, Rs, j0, cam, width, height, thr, cos_cone, cone_half, ang_step, pix_step,
                   next_step, ref_u, ref_v, has_ref, pol, off_u, off_v, out_j, out_i, out_u, out_v, out_p):
    """Advance every landmark through steps ``[j0, j0 + len(Rs))``.

    On entering the view a landmark's reference is its projection shifted
    by ``(off_u[i], off_v[i])`` (shorter than ``thr``), which staggers the
    first events instead of firing them all after the same motion.

    ``Rs[s]`` is the camera-to-world rotation at step ``j0 + s``. Landmarks
    jump ahead whenever the motion bounds (``ang_step`` rad and
    ``pix_step`` px per step) prove nothing can happen sooner. Returns the
    number of events written, or -1 if the output buffers overflowed.
    """
    m = Rs.shape[0]
    j_end = j0 + m
    cap = out_j.shape[0]
    n = 0
    for i in range(L.shape[0]):
        lx = L[i, 0]
        ly = L[i, 1]
        lz = L[i, 2]
        j = next_step[i]
        if j < j0:
            j = j0
        while j < j_end:
            R = Rs[j - j0]
            # camera-frame direction R^T l
            x = R[0, 0] * lx + R[1, 0] * ly + R[2, 0] * lz
            y = R[0, 1] * lx + R[1, 1] * ly + R[2, 1] * lz
            z = R[0, 2] * lx + R[1, 2] * ly + R[2, 2] * lz
            if z <= cos_cone:
                has_ref[i] = False
                ang = np.arccos(min(1.0, max(-1.0, z)))
                skip = int((ang - cone_half) / ang_step)
                j += max(skip, 1)
                continue
            u, v = project_pixel(x, y, z, cam)
            ur = np.floor(u + 0.5)
            vr = np.floor(v + 0.5)
            if ur < 0 or ur > width - 1 or vr < 0 or vr > height - 1:
                has_ref[i] = False
                dist = max(-0.5 - u, u - (width - 0.5), -0.5 - v, v - (height - 0.5))
                skip = int(dist / pix_step)
                j += max(skip, 1)
                continue
            if not has_ref[i]:
                # first sighting only sets the reference position
                ref_u[i] = u + off_u[i]
                ref_v[i] = v + off_v[i]
                has_ref[i] = True
                j += 1
                continue
            du = u - ref_u[i]
            dv = v - ref_v[i]
            moved = np.sqrt(du * du + dv * dv)
            if moved < thr:
                skip = int((thr - moved) / pix_step)
                j += max(skip, 1)
                continue
            if n >= cap:
                return -1
            out_j[n] = j
            out_i[n] = i
            out_u[n] = int(ur)
            out_v[n] = int(vr)
            out_p[n] = pol[i]
            n += 1
            pol[i] = -pol[i]
            ref_u[i] = u
            ref_v[i] = v
            j += 1
        next_step[i] = j
    return n
