"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy fallback is
imported. Setting ``DEEPSENSE_PURE_PYTHON=1`` forces the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("DEEPSENSE_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py


def unfold(x: np.ndarray, fh: int, fw: int) -> np.ndarray:
    return _impl.unfold(np.ascontiguousarray(x, dtype=np.float64), fh, fw)


def fold(cols: np.ndarray, c: int, fh: int, fw: int) -> np.ndarray:
    return _impl.fold(np.ascontiguousarray(cols, dtype=np.float64), c, fh, fw)


def strapdown(t, acc, gyro_z, mag_heading, gravity: float, gain: float, psi0: float):
    return _impl.strapdown(
        np.ascontiguousarray(t, dtype=np.float64),
        np.ascontiguousarray(acc, dtype=np.float64),
        np.ascontiguousarray(gyro_z, dtype=np.float64),
        np.ascontiguousarray(mag_heading, dtype=np.float64),
        float(gravity),
        float(gain),
        float(psi0),
    )
