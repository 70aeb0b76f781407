"""Hot loops with a compiled backend and a NumPy fallback.

The Cython extension ``_ckernels`` is used when it was built; otherwise, or
when the environment variable ``GAPMARK_PURE_PYTHON`` is set to a non-empty
value other than ``0``, the pure-Python module is used.  ``BACKEND`` names
the active choice.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("GAPMARK_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

latch_codes = _impl.latch_codes
viterbi = _impl.viterbi
forward_loglik = _impl.forward_loglik


def available_backends() -> dict[str, object]:
    """Every importable backend module keyed by name (for tests and benchmarks)."""
    out: dict[str, object] = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


__all__ = ["BACKEND", "available_backends", "forward_loglik", "latch_codes", "viterbi"]
