"""Select the compiled kernels when built, the numpy fallback otherwise.

Set ``KIMURA_SPDE_PURE=1`` to force the fallback.
"""
import os

import numpy as np

from . import _fallback

_core = None
if os.environ.get("KIMURA_SPDE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _core  # type: ignore[no-redef]
    except ImportError:
        _core = None

COMPILED = _core is not None
_impl = _core if _core is not None else _fallback


def _flat(*arrays):
    b = np.broadcast_arrays(*[np.asarray(a, dtype=np.float64) for a in arrays])
    shape = b[0].shape
    return shape, [np.ascontiguousarray(a).ravel() for a in b]


def ive(order: float, x, switch: float = 30.0) -> np.ndarray:
    shape, (xf,) = _flat(x)
    return _impl.ive_array(float(order), xf, float(switch)).reshape(shape)


def q_nu(nu: float, z, w, t, switch: float = 30.0) -> np.ndarray:
    shape, (zf, wf, tf) = _flat(z, w, t)
    return _impl.q_nu_array(float(nu), zf, wf, tf, float(switch)).reshape(shape)


def q0_squared_sum(z, w, t, weight, switch: float = 30.0) -> float:
    """sum of weight * q_0(z, w, t)^2 over broadcast nodes, without the intermediate array."""
    _, flat = _flat(z, w, t, weight)
    return float(_impl.q0_squared_weighted(*flat, float(switch)))


def use_fallback(flag: bool = True) -> None:
    """Switch implementations at runtime (used by the benchmark and tests)."""
    global _impl
    _impl = _fallback if flag or _core is None else _core


def backend_name() -> str:
    return "compiled" if _impl is not _fallback else "numpy"
