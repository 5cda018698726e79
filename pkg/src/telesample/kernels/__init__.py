"""Hot loops of the pipeline.

The compiled Cython module is used when it was built; otherwise the numpy
implementations are imported. Set ``TELESAMPLE_PURE_PYTHON=1`` to force the
fallback.
"""

import os

from . import _pykernels as py

if os.environ.get("TELESAMPLE_PURE_PYTHON", "") not in ("", "0"):
    native = None
else:
    try:
        from . import _ckernels as native
    except ImportError:  # extension not built
        native = None

_impl = native if native is not None else py
BACKEND = "cython" if native is not None else "python"

path_hashes = _impl.path_hashes
span_scores = _impl.span_scores
topo_scores = _impl.topo_scores

STATUS_OK = py.STATUS_OK
STATUS_ORPHAN = py.STATUS_ORPHAN
STATUS_MULTI_ROOT = py.STATUS_MULTI_ROOT
STATUS_CYCLE = py.STATUS_CYCLE

__all__ = ["BACKEND", "native", "py", "path_hashes", "span_scores", "topo_scores"]
