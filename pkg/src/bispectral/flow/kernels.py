"""Backend selection for the flow kernels.

The compiled extension is used when it was built; otherwise the NumPy
reference is imported. Set ``BISPECTRAL_PURE_PYTHON=1`` to force the
fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("BISPECTRAL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"
    else:
        BACKEND = "cython"

assemble = _impl.assemble
solve = _impl.solve
LDAB = _kernels_py.LDAB
N_CONSTS = _kernels_py.N_CONSTS
cell_properties = _kernels_py.cell_properties
accumulation = _kernels_py.accumulation

python_backend = _kernels_py


def compiled_backend():
    """The compiled module, or None when the extension is unavailable."""
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels
