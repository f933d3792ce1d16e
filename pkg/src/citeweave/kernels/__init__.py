"""Kernel backend selection: compiled extension if available, else pure Python.

Set CITEWEAVE_KERNELS=pure to force the fallback, or =cython to require the
compiled extension (import error if it is missing). Both backends produce
bit-identical results; the compiled one is just faster.
"""

import os

from . import _pure

_requested = os.environ.get("CITEWEAVE_KERNELS", "auto").strip().lower()

if _requested in ("pure", "python"):
    impl = _pure
    BACKEND = "pure"
elif _requested in ("auto", "", "cython", "compiled"):
    try:
        from . import _core as impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _requested in ("cython", "compiled"):
            raise
        impl = _pure
        BACKEND = "pure"
else:
    raise ValueError(f"unknown CITEWEAVE_KERNELS value: {_requested!r}")
