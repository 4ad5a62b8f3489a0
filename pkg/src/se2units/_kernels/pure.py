"""Pure-numpy implementations of the hot kernels.

Semantics here are the contract; the compiled extension must match them
(same gate order, same accumulation order for distances, same tie rule).
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_batch(x_proj: np.ndarray, w_hh_t: np.ndarray) -> np.ndarray:
    """Run a batch of LSTM sequences from zero initial state.

    x_proj: (N, B, 4H) input projections with biases already added, gate
            blocks ordered (input, forget, cell, output) along the last axis.
    w_hh_t: (H, 4H) transposed recurrent weights.
    Returns (N, B, H) hidden states.
    """
    n_steps, batch, h4 = x_proj.shape
    hidden = h4 // 4
    if w_hh_t.shape != (hidden, h4):
        raise ValueError(f"w_hh_t shape {w_hh_t.shape} inconsistent with gates {h4}")

    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    out = np.empty((n_steps, batch, hidden))
    for t in range(n_steps):
        gates = x_proj[t] + h @ w_hh_t
        i = _sigmoid(gates[:, 0 * hidden:1 * hidden])
        f = _sigmoid(gates[:, 1 * hidden:2 * hidden])
        g = np.tanh(gates[:, 2 * hidden:3 * hidden])
        o = _sigmoid(gates[:, 3 * hidden:4 * hidden])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[t] = h
    return out


def nearest_centroid(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the nearest centroid per row (squared Euclidean).

    Ties break toward the lowest centroid index. Distances use the direct
    difference form, chunked to bound memory.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    centroids = np.ascontiguousarray(centroids, dtype=np.float64)
    n = x.shape[0]
    out = np.empty(n, dtype=np.int64)
    chunk = max(1, 4_000_000 // max(1, centroids.size))
    for start in range(0, n, chunk):
        diff = x[start:start + chunk, None, :] - centroids[None, :, :]
        dists = np.square(diff).sum(axis=2)
        out[start:start + chunk] = np.argmin(dists, axis=1)
    return out
