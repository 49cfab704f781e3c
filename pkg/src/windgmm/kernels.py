"""Backend selection for the hot kernels.

Prefers the compiled extension, falls back to the numpy implementations.
Set WINDGMM_PURE_PYTHON=1 to force the fallback (used by the benchmark
and the backend-equivalence tests).
"""

import os

from . import _pykernels

if os.environ.get("WINDGMM_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = _impl.BACKEND_NAME
component_loglik = _impl.component_loglik
consensus_rounds = _impl.consensus_rounds
