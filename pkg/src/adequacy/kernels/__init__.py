"""Kernel backend selection.

The hot loops (thermal availability traces, storage dispatch, boosted-tree
inference) exist twice: a compiled Cython core and a pure-Python mirror
with identical semantics. The compiled core is preferred when importable;
set ADEQUACY_BACKEND=pure (or =compiled) to force a choice.

Both backends consume the same splitmix64 random streams, so every result
is bit-identical across backends; only speed differs (see
benchmarks/bench_kernels.py).
"""

import os

from . import pure
from .pure import SplitMix64, derive_seed

_choice = os.environ.get("ADEQUACY_BACKEND", "auto").lower()

_compiled = None
if _choice in ("auto", "compiled"):
    try:
        from . import _core as _compiled
    except ImportError:
        _compiled = None
        if _choice == "compiled":
            raise ImportError(
                "ADEQUACY_BACKEND=compiled but the extension is not built; "
                "run `python setup.py build_ext --inplace` or reinstall"
            )

if _compiled is not None:
    _impl = _compiled
    BACKEND = "compiled"
else:
    _impl = pure
    BACKEND = "pure"

thermal_trace = _impl.thermal_trace
greedy_dispatch = _impl.greedy_dispatch
exact_dispatch = _impl.exact_dispatch
gbt_predict = _impl.gbt_predict
gbt_predict_values = _impl.gbt_predict_values


def backend_name():
    return BACKEND


__all__ = [
    "BACKEND",
    "SplitMix64",
    "backend_name",
    "derive_seed",
    "exact_dispatch",
    "gbt_predict",
    "gbt_predict_values",
    "greedy_dispatch",
    "thermal_trace",
]
