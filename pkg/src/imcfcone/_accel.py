"""Backend switch for the hot kernels.

``IMCF_BACKEND=numba`` (default when numba imports) compiles the stencil and
time-stepping loops; ``IMCF_BACKEND=numpy`` runs the same stepping loop in
plain Python over vectorised numpy kernels.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

HAVE_NUMBA = numba is not None


def requested_backend():
    name = os.environ.get("IMCF_BACKEND", "numba").strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"IMCF_BACKEND must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        return "numpy"
    return name


def njit(func):
    """``numba.njit(cache=True)`` when available, identity otherwise."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func
