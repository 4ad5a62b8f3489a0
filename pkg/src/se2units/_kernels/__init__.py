"""Hot-kernel backend selection.

The Cython extension is used when available, with a numpy fallback. Set
SE2UNITS_PURE=1 to force the fallback (used by the benchmark and the
backend-equivalence tests).

For the LSTM recurrence the two backends trade places with problem width:
the compiled loop wins on narrow steps (call overhead dominates) while
numpy's SIMD transcendentals win on wide ones, so the compiled backend is
dispatched per call on the gate-buffer width. The crossover constant comes
from benchmarks/bench_kernels.py. nearest_centroid is compiled whenever
possible; it has no wide-side disadvantage.
"""

import os

from . import pure

# gate elements (batch * 4 * hidden) per step at which numpy overtakes the
# compiled loop; measured in benchmarks/bench_kernels.py
LSTM_COMPILED_MAX_WIDTH = 512

if os.environ.get("SE2UNITS_PURE") == "1":
    _core = None
else:
    try:
        from . import _core
    except ImportError:
        _core = None

if _core is None:
    BACKEND = "pure"
    lstm_batch = pure.lstm_batch
    nearest_centroid = pure.nearest_centroid
else:
    BACKEND = "compiled"
    nearest_centroid = _core.nearest_centroid

    def lstm_batch(x_proj, w_hh_t):
        if x_proj.shape[1] * x_proj.shape[2] <= LSTM_COMPILED_MAX_WIDTH:
            return _core.lstm_batch(x_proj, w_hh_t)
        return pure.lstm_batch(x_proj, w_hh_t)

__all__ = ["BACKEND", "LSTM_COMPILED_MAX_WIDTH", "lstm_batch",
           "nearest_centroid", "pure"]
