"""Kernel backend selection.

The compiled Cython extension is used when built; otherwise the pure NumPy
implementation takes over. ``DUELQ_KERNELS=python|cython`` forces a backend
at import time, and :func:`use` switches at runtime (tests, benchmarks).
Both backends are double precision; results agree to rounding noise but are
not bitwise identical because summation order differs.
"""

import os

from . import _pykernels

_BACKENDS = {"python": _pykernels}

try:
    from . import _ckernels
    _BACKENDS["cython"] = _ckernels
except ImportError:
    _ckernels = None

_requested = os.environ.get("DUELQ_KERNELS")
if _requested is not None and _requested not in _BACKENDS:
    raise ImportError(
        f"DUELQ_KERNELS={_requested!r} requested but only {sorted(_BACKENDS)} "
        "are available (was the extension compiled?)"
    )

_impl = _BACKENDS[_requested or ("cython" if "cython" in _BACKENDS else "python")]


def available():
    """Names of the backends importable in this environment."""
    return sorted(_BACKENDS)


def current():
    """Name of the active backend."""
    return _impl.NAME


def use(name):
    """Switch the active kernel backend ("python" or "cython")."""
    global _impl
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {sorted(_BACKENDS)}")
    _impl = _BACKENDS[name]


def chain_forward(ws, bs, acts, x):
    return _impl.chain_forward(ws, bs, acts, x)


def chain_backward(ws, acts, x, outs, gout, dws, dbs):
    return _impl.chain_backward(ws, acts, x, outs, gout, dws, dbs)
