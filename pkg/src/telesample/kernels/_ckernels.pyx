# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the functions in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY

cnp.import_array()

ctypedef cnp.uint64_t u64

cdef u64 FNV_OFFSET = 14695981039346656037ULL
cdef u64 FNV_PRIME = 1099511628211ULL


def path_hashes(offsets, parent, elem):
    cdef const cnp.int64_t[:] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const cnp.int64_t[:] par = np.ascontiguousarray(parent, dtype=np.int64)
    cdef const cnp.int64_t[:] el = np.ascontiguousarray(elem, dtype=np.int64)
    cdef Py_ssize_t n_traces = off.shape[0] - 1
    cdef Py_ssize_t n = par.shape[0]
    h_arr = np.zeros(n, dtype=np.uint64)
    leaf_arr = np.ones(n, dtype=np.uint8)
    status_arr = np.zeros(n_traces, dtype=np.int8)
    state_arr = np.zeros(n, dtype=np.int8)  # 0 unseen, 1 on stack, 2 done, 3 unresolvable
    stack_arr = np.empty(max(n, 1), dtype=np.int64)
    cdef u64[:] h = h_arr
    cdef cnp.uint8_t[:] leaf = leaf_arr
    cdef cnp.int8_t[:] status = status_arr
    cdef cnp.int8_t[:] state = state_arr
    cdef cnp.int64_t[:] stack = stack_arr
    cdef Py_ssize_t t, i, base, end, node, top, roots, p
    cdef bint orphan, cyclic, bad
    cdef u64 acc

    for t in range(n_traces):
        base = off[t]
        end = off[t + 1]
        roots = 0
        orphan = False
        for i in range(base, end):
            p = par[i]
            if p == -1:
                roots += 1
            elif p == -2:
                orphan = True
            else:
                leaf[base + p] = 0
        cyclic = False
        for i in range(base, end):
            if state[i] >= 2:
                continue
            top = 0
            node = i
            bad = False
            # climb until a resolved ancestor, a root, an orphan or a cycle
            while True:
                if state[node] == 2:
                    acc = h[node]
                    break
                if state[node] == 3:
                    bad = True
                    break
                if state[node] == 1:
                    cyclic = True
                    bad = True
                    break
                state[node] = 1
                stack[top] = node
                top += 1
                p = par[node]
                if p == -1:
                    acc = FNV_OFFSET
                    break
                if p == -2:
                    bad = True
                    break
                node = base + p
            if bad:
                while top > 0:
                    top -= 1
                    state[stack[top]] = 3
                continue
            while top > 0:
                top -= 1
                node = stack[top]
                acc = (acc ^ <u64>(el[node] + 1)) * FNV_PRIME
                h[node] = acc
                state[node] = 2
        if orphan:
            status[t] = 1
        elif roots > 1:
            status[t] = 2
        elif cyclic or roots == 0:
            status[t] = 3
    return h_arr, leaf_arr.astype(bool), status_arr


def span_scores(offsets, stat_idx, durations, mu, sigma, ref, double z_unknown):
    cdef const cnp.int64_t[:] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const cnp.int64_t[:] si = np.ascontiguousarray(stat_idx, dtype=np.int64)
    cdef const double[:] d = np.ascontiguousarray(durations, dtype=np.float64)
    cdef const double[:] m = np.ascontiguousarray(mu, dtype=np.float64)
    cdef const double[:] s = np.ascontiguousarray(sigma, dtype=np.float64)
    cdef const double[:] r = np.ascontiguousarray(ref, dtype=np.float64)
    cdef Py_ssize_t n_traces = off.shape[0] - 1
    max_z_arr = np.zeros(n_traces)
    arg_arr = np.full(n_traces, -1, dtype=np.int64)
    max_rel_arr = np.zeros(n_traces)
    cdef double[:] max_z = max_z_arr
    cdef cnp.int64_t[:] arg = arg_arr
    cdef double[:] max_rel = max_rel_arr
    cdef Py_ssize_t t, i, k, best_i
    cdef double z, best_z, rel, best_rel
    for t in range(n_traces):
        best_z = -INFINITY
        best_rel = -INFINITY
        best_i = -1
        for i in range(off[t], off[t + 1]):
            k = si[i]
            if k >= 0:
                z = fabs(d[i] - m[k]) / s[k]
                rel = (d[i] - r[k]) / r[k]
                if rel > best_rel:
                    best_rel = rel
            else:
                z = z_unknown
            if z > best_z:
                best_z = z
                best_i = i
        if best_i >= 0:
            max_z[t] = best_z
            arg[t] = best_i
        if best_rel > -INFINITY:
            max_rel[t] = best_rel
    return max_z_arr, arg_arr, max_rel_arr


def topo_scores(q_offsets, q_elems, r_offsets, r_elems):
    cdef const cnp.int64_t[:] qo = np.ascontiguousarray(q_offsets, dtype=np.int64)
    cdef const cnp.int64_t[:] qe = np.ascontiguousarray(q_elems, dtype=np.int64)
    cdef const cnp.int64_t[:] ro = np.ascontiguousarray(r_offsets, dtype=np.int64)
    cdef const cnp.int64_t[:] re = np.ascontiguousarray(r_elems, dtype=np.int64)
    cdef Py_ssize_t nq = qo.shape[0] - 1
    cdef Py_ssize_t nr = ro.shape[0] - 1
    score_arr = np.ones(nq)
    nearest_arr = np.full(nq, -1, dtype=np.int64)
    cdef double[:] score = score_arr
    cdef cnp.int64_t[:] nearest = nearest_arr
    cdef Py_ssize_t i, j, a, b, a_end, b_end, inter, la, lb
    cdef double sim, best
    for i in range(nq):
        best = -1.0
        la = qo[i + 1] - qo[i]
        for j in range(nr):
            lb = ro[j + 1] - ro[j]
            # sorted-merge intersection
            a = qo[i]
            a_end = qo[i + 1]
            b = ro[j]
            b_end = ro[j + 1]
            inter = 0
            while a < a_end and b < b_end:
                if qe[a] == re[b]:
                    inter += 1
                    a += 1
                    b += 1
                elif qe[a] < re[b]:
                    a += 1
                else:
                    b += 1
            if inter == la and inter == lb:
                best = 1.0
                nearest[i] = j
                break
            sim = <double>inter / <double>(la + lb - inter)
            if sim > best:
                best = sim
                nearest[i] = j
        if nr > 0:
            score[i] = 1.0 - best
    return score_arr, nearest_arr
