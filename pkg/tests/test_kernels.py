from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from telesample import kernels
from telesample.kernels import _pykernels as py

native = kernels.native
needs_native = pytest.mark.skipif(native is None, reason="compiled kernels not built")


@st.composite
def forests(draw):
    """Traces as CSR arrays; parents are mostly valid, sometimes orphaned, cyclic or extra roots."""
    n_traces = draw(st.integers(0, 8))
    offsets, parent, elem = [0], [], []
    for _ in range(n_traces):
        n = draw(st.integers(0, 7))
        for j in range(n):
            kind = draw(st.sampled_from(["tree"] * 6 + ["root", "orphan", "any"]))
            if j == 0 or kind == "root":
                p = -1
            elif kind == "orphan":
                p = -2
            elif kind == "any":
                p = draw(st.integers(0, n - 1))
            else:
                p = draw(st.integers(0, j - 1))
            parent.append(p)
            elem.append(draw(st.integers(0, 5)))
        offsets.append(offsets[-1] + n)
    return (np.array(offsets, dtype=np.int64), np.array(parent, dtype=np.int64),
            np.array(elem, dtype=np.int64))


@st.composite
def csr_sets(draw, max_sets=8):
    n = draw(st.integers(0, max_sets))
    offsets, flat = [0], []
    for _ in range(n):
        s = sorted(draw(st.sets(st.integers(0, 9), min_size=1, max_size=5)))
        flat.extend(s)
        offsets.append(len(flat))
    return np.array(offsets, dtype=np.int64), np.array(flat, dtype=np.int64)


@needs_native
@settings(max_examples=500)
@given(forests())
def test_path_hashes_agree(f):
    a = py.path_hashes(*f)
    b = native.path_hashes(*f)
    status = a[2]
    assert np.array_equal(status, b[2])
    seg = np.repeat(np.arange(len(status)), np.diff(f[0]))
    ok = status[seg] == py.STATUS_OK
    assert np.array_equal(a[0][ok], b[0][ok])
    assert np.array_equal(a[1][ok], b[1][ok])


@needs_native
@settings(max_examples=500)
@given(st.data())
def test_span_scores_agree(data):
    sizes = data.draw(st.lists(st.integers(0, 6), max_size=8))
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    n = int(offsets[-1])
    n_stats = 4
    stat_idx = np.array(data.draw(st.lists(st.integers(-1, n_stats - 1), min_size=n, max_size=n)), dtype=np.int64)
    d = np.array(data.draw(st.lists(st.floats(0, 1e4), min_size=n, max_size=n)), dtype=np.float64)
    mu = np.array(data.draw(st.lists(st.floats(0, 1e3), min_size=n_stats, max_size=n_stats)))
    sigma = np.array(data.draw(st.lists(st.floats(0.01, 1e3), min_size=n_stats, max_size=n_stats)))
    ref = np.array(data.draw(st.lists(st.floats(0.01, 1e3), min_size=n_stats, max_size=n_stats)))
    a = py.span_scores(offsets, stat_idx, d, mu, sigma, ref, 3.0)
    b = native.span_scores(offsets, stat_idx, d, mu, sigma, ref, 3.0)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


@needs_native
@settings(max_examples=500)
@given(csr_sets(), csr_sets())
def test_topo_scores_agree(q, r):
    a = py.topo_scores(*q, *r)
    b = native.topo_scores(*q, *r)
    assert np.allclose(a[0], b[0], rtol=0, atol=1e-15)
    assert np.array_equal(a[1], b[1])


def test_topo_scores_examples():
    # {0,1,2} vs {0,1,3}: Jaccard 2/4
    score, nearest = kernels.topo_scores([0, 3], [0, 1, 2], [0, 3, 5], [0, 1, 3, 7, 8])
    assert score.tolist() == [0.5] and nearest.tolist() == [0]
    score, nearest = kernels.topo_scores([0, 1], [4], [0, 0], [])
    assert score.tolist() == [1.0]


def test_path_hash_statuses():
    offsets = np.array([0, 2, 4, 6, 7])
    parent = np.array([-1, 0, -1, -1, 1, 0, -2])
    elem = np.zeros(7, dtype=np.int64)
    _, _, status = kernels.path_hashes(offsets, parent, elem)
    assert status.tolist() == [py.STATUS_OK, py.STATUS_MULTI_ROOT, py.STATUS_CYCLE, py.STATUS_ORPHAN]


def test_fallback_is_selected_by_environment():
    code = "from telesample import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, TELESAMPLE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
