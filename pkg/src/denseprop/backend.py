"""Kernel backend selection.

The compiled Cython core is preferred when its extension module imported
cleanly; otherwise the numpy fallback takes over (with a warning, since it is
noticeably slower on big maps). Both expose the same functions with the same
numerics. Override the default with the DENSEPROP_BACKEND environment
variable ("compiled" or "python") or `use()` at runtime.

DENSEPROP_THREADS sets the default engine thread count (compiled backend
only; the fallback is single-threaded and ignores it).
"""

from __future__ import annotations

import os
import warnings

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled


def available() -> list[str]:
    return sorted(_BACKENDS)


def use(name: str) -> None:
    global _active
    if name in ("auto", ""):
        name = "compiled" if _compiled is not None else "python"
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available()}")
    _active = name


def active() -> str:
    return _active


def kernels():
    return _BACKENDS[_active]


def default_threads() -> int:
    raw = os.environ.get("DENSEPROP_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            warnings.warn(f"DENSEPROP_THREADS={raw!r} is not an integer; using 1",
                          RuntimeWarning)
            return 1
        return max(1, n)
    return 1


_active = "python"
_env = os.environ.get("DENSEPROP_BACKEND", "").strip().lower()
if _env:
    use(_env)
else:
    use("auto")
    if _compiled is None:
        warnings.warn(
            "denseprop compiled kernels are unavailable; falling back to the "
            "slower numpy backend",
            RuntimeWarning,
        )
