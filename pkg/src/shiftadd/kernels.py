"""Backend selection for the hot convolution kernels.

The compiled core (``_ckernels``) is used when it was built; otherwise the
numpy fallback (``_pykernels``) is used. Set ``SHIFTADD_BACKEND=python`` to
force the fallback. Both backends produce bit-identical results.
"""
import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels


def _select():
    want = os.environ.get("SHIFTADD_BACKEND", "").strip().lower()
    if want:
        if want not in BACKENDS:
            raise ImportError(f"SHIFTADD_BACKEND={want!r} is not available; have {sorted(BACKENDS)}")
        return want
    return "cython" if "cython" in BACKENDS else "python"


BACKEND = _select()
_impl = BACKENDS[BACKEND]


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    return BACKENDS[name or BACKEND]


def _f(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def conv_forward(xp, w, stride, E, F, backend=None):
    return get_backend(backend).conv_forward(_f(xp), _f(w), int(stride), int(E), int(F))


def l1_forward(xp, w, mask, stride, E, F, backend=None):
    return get_backend(backend).l1_forward(_f(xp), _f(w), _f(mask), int(stride), int(E), int(F))


def conv_weight_grad(xp, up, stride, R, S, backend=None):
    return get_backend(backend).conv_weight_grad(_f(xp), _f(up), int(stride), int(R), int(S))


def l1_weight_grad(xp, w, up, stride, backend=None):
    return get_backend(backend).l1_weight_grad(_f(xp), _f(w), _f(up), int(stride))


def conv_input_grad(up, w, stride, Hp, Wp, backend=None):
    return get_backend(backend).conv_input_grad(_f(up), _f(w), int(stride), int(Hp), int(Wp))


def l1_input_grad(xp, w, mask, up, stride, backend=None):
    return get_backend(backend).l1_input_grad(_f(xp), _f(w), _f(mask), _f(up), int(stride))


def shift_forward_int(xp, sign, shift, stride, E, F, backend=None):
    return get_backend(backend).shift_forward_int(_i(xp), _i(sign), _i(shift), int(stride), int(E), int(F))


def l1_forward_int(xp, w, mask, stride, E, F, backend=None):
    return get_backend(backend).l1_forward_int(_i(xp), _i(w), _i(mask), int(stride), int(E), int(F))
