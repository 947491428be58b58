"""Backend dispatch for the hot kernels.

FOLLMER_BACKEND selects the implementation:
  auto   (default) numba if importable, else numpy
  numba  require the compiled kernels, fail loudly if numba is missing
  numpy  pure-numpy reference path

Both backends draw from the same counter-based streams; elementwise outputs
are bit-identical and Monte Carlo reductions agree to roundoff.
"""

from __future__ import annotations

import os

from ..errors import ConfigError

_choice = os.environ.get("FOLLMER_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ConfigError(f"FOLLMER_BACKEND must be auto, numba, or numpy, got {_choice!r}")

if _choice in ("auto", "numba"):
    try:
        from . import numba_impl as _impl
        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise
        from . import numpy_impl as _impl
        BACKEND = "numpy"
else:
    from . import numpy_impl as _impl
    BACKEND = "numpy"

TARGET_GAUSSIAN = _impl.TARGET_GAUSSIAN
TARGET_MIXTURE2 = _impl.TARGET_MIXTURE2
noise_tensor = _impl.noise_tensor
semigroup_mc_drift_1d = _impl.semigroup_mc_drift_1d
sfs_terminal_1d = _impl.sfs_terminal_1d

__all__ = [
    "BACKEND",
    "TARGET_GAUSSIAN",
    "TARGET_MIXTURE2",
    "noise_tensor",
    "semigroup_mc_drift_1d",
    "sfs_terminal_1d",
]
