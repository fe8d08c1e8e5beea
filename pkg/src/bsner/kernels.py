"""Backend selection for the span-grid kernels.

The compiled extension is used when it imports; otherwise the pure-Python
module is. :func:`use_backend` switches explicitly (tests and the benchmark
run both).
"""

from __future__ import annotations

from types import ModuleType

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS: dict[str, ModuleType] = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["compiled"] = _ckernels

_current: ModuleType = BACKENDS.get("compiled", _pykernels)


def backend_name() -> str:
    return "compiled" if _current is _ckernels and _ckernels is not None else "python"


def use_backend(name: str) -> None:
    global _current
    if name not in BACKENDS:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}")
    _current = BACKENDS[name]


def smooth_fill(starts, ends, types, sizes, T, c, epsilon, nominal):
    return _current.smooth_fill(starts, ends, types, sizes, T, c, epsilon, nominal)


def candidates(probs, valid, min_conf):
    return _current.candidates(probs, valid, min_conf)


def greedy(starts, ends, nested):
    return _current.greedy(starts, ends, nested)
