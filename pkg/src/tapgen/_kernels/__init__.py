"""Backend selection for the sampling kernels.

The compiled Cython extension is used when available; otherwise the numpy
fallback.  ``TAPGEN_BACKEND=python`` forces the fallback, ``=ext`` requires
the extension.  Both backends share one contract (see _sampling_py) and
produce bit-identical results.
"""

import os

from . import _sampling_py

try:
    from . import _sampling_cy
except ImportError:
    _sampling_cy = None

_BACKENDS = {"python": _sampling_py}
if _sampling_cy is not None:
    _BACKENDS["ext"] = _sampling_cy


def _default_backend() -> str:
    forced = os.environ.get("TAPGEN_BACKEND", "").strip().lower()
    if forced:
        if forced not in _BACKENDS:
            raise ImportError(
                f"TAPGEN_BACKEND={forced!r} requested but only {sorted(_BACKENDS)} available"
            )
        return forced
    return "ext" if "ext" in _BACKENDS else "python"


_active = _BACKENDS[_default_backend()]


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def backend_name() -> str:
    return _active.NAME


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {sorted(_BACKENDS)}")
    _active = _BACKENDS[name]


def expand_forward(f, tl, tr, wl, wr):
    return _active.expand_forward(f, tl, tr, wl, wr)


def expand_backward(gout, tl, tr, wl, wr, length):
    return _active.expand_backward(gout, tl, tr, wl, wr, length)


def collapse_forward(g, tl, tr, wl, wr, bias):
    return _active.collapse_forward(g, tl, tr, wl, wr, bias)


def collapse_backward(gout, tl, tr, wl, wr, length):
    return _active.collapse_backward(gout, tl, tr, wl, wr, length)
