"""Hot kernels: compiled Cython when available, NumPy otherwise.

Set ``CMIDEBIAS_PURE_PYTHON=1`` to force the NumPy implementations.
"""

import os

from . import _pykernels as py

compiled = None
if os.environ.get("CMIDEBIAS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled
    except ImportError:  # extension not built
        compiled = None

impl = compiled if compiled is not None else py
BACKEND = "cython" if compiled is not None else "numpy"

uniforms = impl.uniforms
weighted_draws = impl.weighted_draws
knn_donors = impl.knn_donors
critic_epoch = impl.critic_epoch
critic_forward = impl.critic_forward
best_stump = impl.best_stump
stream_key = py.stream_key
ACT_RELU = py.ACT_RELU
ACT_TANH = py.ACT_TANH

__all__ = [
    "BACKEND",
    "ACT_RELU",
    "ACT_TANH",
    "best_stump",
    "critic_epoch",
    "critic_forward",
    "knn_donors",
    "stream_key",
    "uniforms",
    "weighted_draws",
]
