"""Pure-Python (numpy) twins of the compiled kernels in ``_kernels.pyx``.

Same algorithms, same random-number consumption order, same outputs.
"""

import numpy as np


def jacobi_eigh(a_in, tol=1e-10, max_sweeps=100, v0=None):
    a = np.array(a_in, dtype=np.float64, order="C", copy=True)
    n = a.shape[0]
    if v0 is None:
        v = np.eye(n)
    else:
        v = np.ascontiguousarray(v0, dtype=np.float64).copy()
        a = np.ascontiguousarray(v.T @ a @ v)
        a = 0.5 * (a + a.T)

    scale = float(np.max(np.abs(np.diag(a)))) if n else 0.0
    if scale == 0.0:
        scale = 1.0
    limit = tol * scale
    iu = np.triu_indices(n, 1)

    sweep = 0
    while sweep < max_sweeps:
        if n < 2 or np.max(np.abs(a[iu])) <= limit:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= limit:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + np.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                tau = s / (1.0 + c)
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                new_p = col_p - s * (col_q + tau * col_p)
                new_q = col_q + s * (col_p - tau * col_q)
                a[:, p] = new_p
                a[:, q] = new_q
                a[p, :] = new_p
                a[q, :] = new_q
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = vp - s * (vq + tau * vp)
                v[:, q] = vq + s * (vp - tau * vq)
        sweep += 1
    return np.diag(a).copy(), v, sweep


def build_itree(x, rows, u_feat, u_split, max_depth):
    x = np.asarray(x, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.int64)
    feature, threshold, left, right, size = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(0)
        return len(feature) - 1

    new_node()
    stack = [(0, rows, 0)]
    order = 0
    while stack:
        node, idx, depth = stack.pop()
        size[node] = len(idx)
        if len(idx) <= 1 or depth >= max_depth:
            order += 1
            continue
        sub = x[idx]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0)
        cand = np.flatnonzero(hi > lo)
        if len(cand) == 0:
            order += 1
            continue
        f = int(cand[int(np.floor(u_feat[order] * len(cand)))])
        split = lo[f] + (1.0 - u_split[order]) * (hi[f] - lo[f])
        if split <= lo[f]:
            split = hi[f]
        order += 1
        go_left = sub[:, f] < split
        feature[node] = f
        threshold[node] = float(split)
        left[node] = new_node()
        right[node] = new_node()
        stack.append((right[node], idx[~go_left], depth + 1))
        stack.append((left[node], idx[go_left], depth + 1))

    return (
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(size, dtype=np.int64),
    )


def itree_path_lengths(x, feature, threshold, left, right, leaf_adjust):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    node = np.zeros(n, dtype=np.int64)
    depth = np.zeros(n, dtype=np.float64)
    rows = np.arange(n)
    active = feature[node] >= 0
    while active.any():
        r = rows[active]
        nd = node[active]
        f = feature[nd]
        go_left = x[r, f] < threshold[nd]
        node[active] = np.where(go_left, left[nd], right[nd])
        depth[active] += 1.0
        active = feature[node] >= 0
    return depth + leaf_adjust[node]
