"""Backend selection for the dense-MLP hot loop.

The compiled extension is used when it imports; set ``TACO_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

from taco import _mlp_py

BACKEND = "python"
if os.environ.get("TACO_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from taco import _mlpcore as _impl
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _mlp_py
else:
    _impl = _mlp_py

mlp_forward = _impl.mlp_forward
mlp_backward = _impl.mlp_backward
n_params = _mlp_py.n_params

__all__ = ["BACKEND", "mlp_forward", "mlp_backward", "n_params"]
