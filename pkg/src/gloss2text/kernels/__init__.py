"""Kernel backend selection.

The compiled extension is used when it has been built; otherwise the numpy
fallback takes over transparently. Set GLOSS2TEXT_PURE_PYTHON=1 to force the
fallback (useful for benchmarking and debugging).
"""

import os

from . import _np as _fallback

if os.environ.get("GLOSS2TEXT_PURE_PYTHON"):
    _impl = _fallback
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _fallback

BACKEND = _impl.BACKEND

softmax_rows = _impl.softmax_rows
softmax_rows_backward = _impl.softmax_rows_backward
layer_norm_rows = _impl.layer_norm_rows
layer_norm_rows_backward = _impl.layer_norm_rows_backward
adam_update = _impl.adam_update
lcs_len = _impl.lcs_len
