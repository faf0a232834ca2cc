"""Sparse graph kernels with a compiled core and a numpy fallback.

At import time the Cython extension is preferred; set the environment
variable ``GRAPHLM_FORCE_PYTHON=1`` to force the numpy implementations
(used by the equivalence tests and the benchmark).
"""

import os

from . import pyref

USING_EXTENSION = False

if os.environ.get("GRAPHLM_FORCE_PYTHON", "") != "1":
    try:
        from . import _graph_ops as _impl

        USING_EXTENSION = True
    except ImportError:
        _impl = pyref
else:
    _impl = pyref


def backend_name():
    return "cython" if USING_EXTENSION else "numpy"


gather_sum = _impl.gather_sum
gather_weighted_sum = _impl.gather_weighted_sum
segment_sum = _impl.segment_sum
edge_softmax = _impl.edge_softmax
edge_softmax_backward = _impl.edge_softmax_backward
