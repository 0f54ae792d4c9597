"""Backend selection for the hot kernels.

The compiled extension is used when it was built and imports cleanly;
otherwise the numpy fallback is used. Set ``DRLCONTROL_PURE_PYTHON=1`` to
force the fallback (the benchmark and the parity tests rely on this).
"""
import os

from drlcontrol import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("DRLCONTROL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from drlcontrol import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

adam_update = _impl.adam_update
soft_update = _impl.soft_update
invert_gradients = _impl.invert_gradients
bn_forward_train = _impl.bn_forward_train
bn_backward = _impl.bn_backward

__all__ = [
    "BACKEND",
    "adam_update",
    "soft_update",
    "invert_gradients",
    "bn_forward_train",
    "bn_backward",
]
