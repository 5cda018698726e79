"""Reference implementations of the hot loops, numpy only.

Every function here has a twin in ``_ckernels.pyx`` with an identical
signature and identical results (hashes are bit-exact).
"""

from __future__ import annotations

import numpy as np

FNV_OFFSET = np.uint64(14695981039346656037)
FNV_PRIME = np.uint64(1099511628211)

STATUS_OK = 0
STATUS_ORPHAN = 1
STATUS_MULTI_ROOT = 2
STATUS_CYCLE = 3


def path_hashes(offsets, parent, elem):
    """Hash the root-to-span element sequence of every span and report leaves.

    ``parent`` holds the local (within-trace) index of each span's parent,
    -1 for a root and -2 for a parent id missing from the trace.

    Returns ``(span_hash, is_leaf, status)`` where ``status`` has one entry
    per trace.
    """
    offsets = np.asarray(offsets, dtype=np.int64)
    parent = np.asarray(parent, dtype=np.int64)
    elem = np.asarray(elem, dtype=np.int64)
    n_traces = len(offsets) - 1
    n = len(parent)
    status = np.zeros(n_traces, dtype=np.int8)
    if n == 0:
        # a trace without spans has no root
        status[:] = STATUS_CYCLE
        return np.zeros(0, dtype=np.uint64), np.zeros(0, dtype=bool), status

    seg = np.repeat(np.arange(n_traces), np.diff(offsets))
    gparent = np.where(parent >= 0, parent + offsets[seg], parent)

    orphan = np.zeros(n_traces, dtype=bool)
    np.logical_or.at(orphan, seg[parent == -2], True)
    roots = np.bincount(seg[parent == -1], minlength=n_traces)

    e = elem.astype(np.uint64) + np.uint64(1)
    h = np.zeros(n, dtype=np.uint64)
    done = parent == -1
    with np.errstate(over="ignore"):
        h[done] = (FNV_OFFSET ^ e[done]) * FNV_PRIME
        has_parent = parent >= 0
        while True:
            safe_parent = np.where(has_parent, gparent, 0)
            ready = ~done & has_parent & done[safe_parent]
            if not ready.any():
                break
            h[ready] = (h[gparent[ready]] ^ e[ready]) * FNV_PRIME
            done |= ready

    unresolved = np.zeros(n_traces, dtype=bool)
    np.logical_or.at(unresolved, seg[~done & (parent != -2)], True)

    status[unresolved | (roots == 0)] = STATUS_CYCLE
    status[roots > 1] = STATUS_MULTI_ROOT
    status[orphan] = STATUS_ORPHAN

    child_count = np.bincount(gparent[parent >= 0], minlength=n)
    is_leaf = child_count == 0
    return h, is_leaf, status


def span_scores(offsets, stat_idx, durations, mu, sigma, ref, z_unknown):
    """Per trace: max |z| over spans, its span index, and max relative latency increase.

    ``stat_idx`` indexes ``mu``/``sigma``/``ref``; -1 marks an operation with
    no reference statistics (scored ``z_unknown``, excluded from the ratio).
    Empty traces get max_z 0, argmax -1, max_rel 0.
    """
    offsets = np.asarray(offsets, dtype=np.int64)
    stat_idx = np.asarray(stat_idx, dtype=np.int64)
    d = np.asarray(durations, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    n_traces = len(offsets) - 1
    max_z = np.zeros(n_traces)
    arg = np.full(n_traces, -1, dtype=np.int64)
    max_rel = np.zeros(n_traces)
    if len(d) == 0:
        return max_z, arg, max_rel

    known = stat_idx >= 0
    k = np.where(known, stat_idx, 0)
    z = np.where(known, np.abs(d - mu[k]) / sigma[k], z_unknown)
    rel = np.where(known, (d - ref[k]) / ref[k], -np.inf)

    counts = np.diff(offsets)
    nonempty = counts > 0
    seg = np.repeat(np.arange(n_traces), counts)
    starts = offsets[:-1][nonempty]
    max_z[nonempty] = np.maximum.reduceat(z, starts)
    r = np.maximum.reduceat(rel, starts)
    max_rel[nonempty] = np.where(np.isfinite(r), r, 0.0)
    # first span attaining the max within each trace
    order = np.lexsort((np.arange(len(z)), -z, seg))
    first = np.ones(len(order), dtype=bool)
    first[1:] = seg[order][1:] != seg[order][:-1]
    arg[seg[order][first]] = order[first]
    return max_z, arg, max_rel


def topo_scores(q_offsets, q_elems, r_offsets, r_elems):
    """Jaccard dissimilarity of each query set to its nearest reference set.

    Sets are given as CSR arrays of sorted, unique element ids. Returns
    ``(score, nearest)`` with ``score = 1 - max Jaccard`` and ``nearest`` the
    first reference attaining it (-1 if there are no references).
    """
    q_offsets = np.asarray(q_offsets, dtype=np.int64)
    r_offsets = np.asarray(r_offsets, dtype=np.int64)
    q_elems = np.asarray(q_elems, dtype=np.int64)
    r_elems = np.asarray(r_elems, dtype=np.int64)
    nq = len(q_offsets) - 1
    nr = len(r_offsets) - 1
    refs = [frozenset(r_elems[r_offsets[j]:r_offsets[j + 1]].tolist()) for j in range(nr)]
    score = np.ones(nq)
    nearest = np.full(nq, -1, dtype=np.int64)
    for i in range(nq):
        q = frozenset(q_elems[q_offsets[i]:q_offsets[i + 1]].tolist())
        best = -1.0
        for j, rset in enumerate(refs):
            if q == rset:
                best, nearest[i] = 1.0, j
                break
            inter = len(q & rset)
            sim = inter / (len(q) + len(rset) - inter)
            if sim > best:
                best, nearest[i] = sim, j
        if nr:
            score[i] = 1.0 - best
    return score, nearest
