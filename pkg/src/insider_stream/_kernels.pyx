# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: cyclic Jacobi eigensolver and isolation-tree kernels.

Semantics match ``_kernels_py`` exactly; the tests compare both.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, floor

cnp.import_array()


def jacobi_eigh(double[:, ::1] a_in, double tol=1e-10, int max_sweeps=100, v0=None):
    cdef Py_ssize_t n = a_in.shape[0]
    cdef Py_ssize_t p, q, k, j
    cdef double apq, app, aqq, theta, t, c, s, tau, akp, akq, vkp, vkq
    cdef double off, scale
    cdef int sweep = 0

    a_np = np.array(a_in, dtype=np.float64, order="C", copy=True)
    if v0 is None:
        v_np = np.eye(n, dtype=np.float64)
    else:
        v_np = np.ascontiguousarray(v0, dtype=np.float64).copy()
        a_np = np.ascontiguousarray(v_np.T @ a_np @ v_np)
        a_np = 0.5 * (a_np + a_np.T)
    cdef double[:, ::1] a = a_np
    cdef double[:, ::1] v = v_np

    scale = 0.0
    for p in range(n):
        scale = max(scale, fabs(a[p, p]))
    if scale == 0.0:
        scale = 1.0

    while sweep < max_sweeps:
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off = max(off, fabs(a[p, q]))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if fabs(apq) <= tol * scale:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + sqrt(1.0 + theta * theta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                tau = s / (1.0 + c)
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    if k == p or k == q:
                        continue
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = akp - s * (akq + tau * akp)
                    a[k, q] = akq + s * (akp - tau * akq)
                    a[p, k] = a[k, p]
                    a[q, k] = a[k, q]
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = vkp - s * (vkq + tau * vkp)
                    v[k, q] = vkq + s * (vkp - tau * vkq)
        sweep += 1

    w = np.array([a[j, j] for j in range(n)], dtype=np.float64)
    return w, v_np, sweep


def build_itree(double[:, ::1] x, cnp.int64_t[::1] rows, double[::1] u_feat,
                double[::1] u_split, int max_depth):
    cdef Py_ssize_t n_rows = rows.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t max_nodes = 2 * n_rows + 1
    feature_np = np.full(max_nodes, -1, dtype=np.int64)
    threshold_np = np.zeros(max_nodes, dtype=np.float64)
    left_np = np.full(max_nodes, -1, dtype=np.int64)
    right_np = np.full(max_nodes, -1, dtype=np.int64)
    size_np = np.zeros(max_nodes, dtype=np.int64)
    cdef cnp.int64_t[::1] feature = feature_np
    cdef double[::1] threshold = threshold_np
    cdef cnp.int64_t[::1] left = left_np
    cdef cnp.int64_t[::1] right = right_np
    cdef cnp.int64_t[::1] size = size_np

    idx_np = np.array(rows, dtype=np.int64, copy=True)
    cdef cnp.int64_t[::1] idx = idx_np
    lo_np = np.empty(d, dtype=np.float64)
    hi_np = np.empty(d, dtype=np.float64)
    cand_np = np.empty(d, dtype=np.int64)
    cdef double[::1] lo = lo_np
    cdef double[::1] hi = hi_np
    cdef cnp.int64_t[::1] cand = cand_np

    # explicit DFS stack of (node, start, end, depth); left child is pushed last
    stack_np = np.empty((max_nodes, 4), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] stack = stack_np
    cdef Py_ssize_t top = 0
    cdef Py_ssize_t n_nodes = 1
    cdef Py_ssize_t node, start, end, depth, i, j, f, n_cand, mid, tmp
    cdef double val, split

    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n_rows
    stack[0, 3] = 0
    top = 1
    cdef Py_ssize_t order = 0

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        size[node] = end - start
        if end - start <= 1 or depth >= max_depth:
            order += 1
            continue
        for j in range(d):
            lo[j] = x[idx[start], j]
            hi[j] = lo[j]
        for i in range(start + 1, end):
            for j in range(d):
                val = x[idx[i], j]
                if val < lo[j]:
                    lo[j] = val
                elif val > hi[j]:
                    hi[j] = val
        n_cand = 0
        for j in range(d):
            if hi[j] > lo[j]:
                cand[n_cand] = j
                n_cand += 1
        if n_cand == 0:
            order += 1
            continue
        f = cand[<Py_ssize_t> floor(u_feat[order] * n_cand)]
        split = lo[f] + (1.0 - u_split[order]) * (hi[f] - lo[f])
        if split <= lo[f]:
            split = hi[f]
        order += 1
        # partition: x < split to the front
        mid = start
        for i in range(start, end):
            if x[idx[i], f] < split:
                tmp = idx[i]
                idx[i] = idx[mid]
                idx[mid] = tmp
                mid += 1
        feature[node] = f
        threshold[node] = split
        left[node] = n_nodes
        right[node] = n_nodes + 1
        n_nodes += 2
        stack[top, 0] = right[node]
        stack[top, 1] = mid
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = left[node]
        stack[top, 1] = start
        stack[top, 2] = mid
        stack[top, 3] = depth + 1
        top += 1

    return (feature_np[:n_nodes].copy(), threshold_np[:n_nodes].copy(),
            left_np[:n_nodes].copy(), right_np[:n_nodes].copy(),
            size_np[:n_nodes].copy())


def itree_path_lengths(double[:, ::1] x, cnp.int64_t[::1] feature, double[::1] threshold,
                       cnp.int64_t[::1] left, cnp.int64_t[::1] right,
                       double[::1] leaf_adjust):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i, node
    cdef double depth
    out_np = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_np
    for i in range(n):
        node = 0
        depth = 0.0
        while feature[node] >= 0:
            if x[i, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
            depth += 1.0
        out[i] = depth + leaf_adjust[node]
    return out_np
