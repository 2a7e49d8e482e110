"""Kernel backend selection.

The compiled Cython extension is preferred when importable; setting
TABPHRASE_PURE=1 (or a failed build) selects the NumPy fallback. Both
backends expose the same functions; `impl` is the active one and `BACKEND`
names it ("compiled" or "python").
"""

import os

from . import exact, fallback

if os.environ.get("TABPHRASE_PURE", "") not in ("", "0"):
    impl = fallback
    BACKEND = "python"
else:
    try:
        from . import _speedups as impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        impl = fallback
        BACKEND = "python"

__all__ = ["impl", "fallback", "exact", "BACKEND"]
