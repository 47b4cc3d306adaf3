"""Encoder kernel selection.

The compiled extension and the numpy module implement the same two
entry points (``encoder_forward``, ``encoder_backward``).  The
extension wins when importable; set ``PINYINGENDER_BACKEND`` to
``python`` or ``compiled`` to force a side, e.g. for benchmarking.
"""

from __future__ import annotations

import os

from . import encoder_np

_REQUESTED = os.environ.get("PINYINGENDER_BACKEND", "auto").strip().lower()

if _REQUESTED in ("", "auto"):
    try:
        from . import _encoder_c as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = encoder_np
        BACKEND = "python"
elif _REQUESTED in ("compiled", "c", "cython"):
    from . import _encoder_c as _impl
    BACKEND = "compiled"
elif _REQUESTED in ("python", "py", "numpy"):
    _impl = encoder_np
    BACKEND = "python"
else:
    raise RuntimeError(
        f"PINYINGENDER_BACKEND={_REQUESTED!r} not recognized; "
        "use auto, compiled, or python"
    )

encoder_forward = _impl.encoder_forward
encoder_backward = _impl.encoder_backward


def available_backends() -> dict:
    """Importable kernel modules by name, for benchmarks and tests."""
    found = {"python": encoder_np}
    try:
        from . import _encoder_c
        found["compiled"] = _encoder_c
    except ImportError:
        pass
    return found
