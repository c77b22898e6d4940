"""JIT selection: numba-compiled kernels by default, pure-Python fallback via env flag.

Set CAPIRE_NO_NUMBA=1 before import to run every kernel as plain Python/numpy.
The flag is read once at import time; both paths execute the same source for
the array kernels, so behaviour differs only in speed (and, for transcendental
functions, possibly in the last ulp).
"""

import os

NUMBA_DISABLED = os.environ.get("CAPIRE_NO_NUMBA", "").strip().lower() in {"1", "true", "yes"}

if NUMBA_DISABLED:

    def maybe_njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(fn):
            return fn

        return deco

else:
    from numba import njit

    def maybe_njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        if args and callable(args[0]):
            return njit(cache=True)(args[0])

        def deco(fn):
            return njit(*args, **kwargs)(fn)

        return deco
