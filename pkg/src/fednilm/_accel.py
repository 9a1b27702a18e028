"""Backend switch for the numeric kernels.

Set ``FEDNILM_BACKEND=numpy`` to force the pure-numpy path. The default is
``numba`` when numba imports cleanly, otherwise numpy.
"""
import os

_requested = os.environ.get("FEDNILM_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"FEDNILM_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

USE_NUMBA = _requested == "numba" and _numba is not None
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(func=None, *, fast=False):
    """``numba.njit`` with caching when numba is present, else the plain function.

    ``fast=True`` allows reassociation and FMA contraction (results stay
    deterministic for a given machine, but differ from numpy in the last bits).
    """
    if func is None:
        return lambda f: njit(f, fast=fast)
    if _numba is None:
        return func
    flags = {"reassoc", "contract"} if fast else False
    return _numba.njit(cache=True, nogil=True, fastmath=flags)(func)
