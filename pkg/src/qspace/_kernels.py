"""Hot loops, each with a numba version and a pure-numpy fallback.

Set ``QSPACE_DISABLE_NUMBA=1`` to force the numpy path.  Both paths sum in
the same order, so they agree bit for bit.
"""
from __future__ import annotations

import os

import numpy as np

MAX_AXES = 4


def _numba_requested() -> bool:
    return os.environ.get("QSPACE_DISABLE_NUMBA", "").strip().lower() not in ("1", "true", "yes", "on")


# ---------------------------------------------------------------------------
# numpy


def interp_np(axes: np.ndarray, lens: np.ndarray, strides: np.ndarray, values: np.ndarray,
              queries: np.ndarray) -> np.ndarray:
    """Multilinear interpolation on a rectilinear grid of up to four axes.

    ``axes`` is ``(4, maxlen)`` padded, ``lens`` the true axis lengths,
    ``strides`` the flat-index strides of ``values``.  Queries outside the
    grid are clamped to the boundary.
    """
    n = queries.shape[0]
    lo = np.zeros((MAX_AXES, n), dtype=np.int64)
    frac = np.zeros((MAX_AXES, n), dtype=np.float64)
    for d in range(MAX_AXES):
        m = lens[d]
        if m < 2:
            continue
        a = axes[d, :m]
        x = np.minimum(np.maximum(queries[:, d], a[0]), a[m - 1])
        i = np.searchsorted(a, x, side="right") - 1
        i = np.minimum(np.maximum(i, 0), m - 2)
        lo[d] = i
        frac[d] = (x - a[i]) / (a[i + 1] - a[i])
    out = np.zeros(n, dtype=np.float64)
    for corner in range(1 << MAX_AXES):
        wgt = np.ones(n, dtype=np.float64)
        idx = np.zeros(n, dtype=np.int64)
        skip = False
        for d in range(MAX_AXES):
            bit = (corner >> d) & 1
            if lens[d] < 2:
                if bit:
                    skip = True
                    break
                continue
            if bit:
                wgt = wgt * frac[d]
                idx = idx + (lo[d] + 1) * strides[d]
            else:
                wgt = wgt * (1.0 - frac[d])
                idx = idx + lo[d] * strides[d]
        if skip:
            continue
        out = out + wgt * values[idx]
    return out


def stage_latency_np(first: np.ndarray, rest: np.ndarray, res: np.ndarray, cin0: np.ndarray,
                     depth: np.ndarray, k: np.ndarray, w: np.ndarray, e: np.ndarray,
                     out: np.ndarray) -> None:
    """``out += `` summed layer latencies of one stage (in place).

    ``first[r, cin, cout, k, e]`` prices the strided first layer whose input
    width is a previous-ladder index; ``rest[r, cin, cout, k, e]`` prices
    the remaining layers.
    """
    acc = first[res, cin0, w[:, 0], k[:, 0], e[:, 0]]
    for j in range(1, w.shape[1]):
        on = j < depth
        step = rest[res, w[:, j - 1], w[:, j], k[:, j], e[:, j]]
        acc = acc + np.where(on, step, 0.0)
    out += acc


def stage_loss_np(layer: np.ndarray, depth_term: np.ndarray, didx: np.ndarray, depth: np.ndarray,
                  k: np.ndarray, w: np.ndarray, e: np.ndarray, out: np.ndarray) -> None:
    """``out += depth_term[didx] + sum of layer[k, w, e]`` over active layers."""
    acc = depth_term[didx]
    for j in range(w.shape[1]):
        on = j < depth
        acc = acc + np.where(on, layer[k[:, j], w[:, j], e[:, j]], 0.0)
    out += acc


# ---------------------------------------------------------------------------
# numba


def _interp_loop(axes, lens, strides, values, queries):
    n = queries.shape[0]
    out = np.zeros(n, dtype=np.float64)
    lo = np.zeros(MAX_AXES, dtype=np.int64)
    frac = np.zeros(MAX_AXES, dtype=np.float64)
    for q in range(n):
        for d in range(MAX_AXES):
            m = lens[d]
            lo[d] = 0
            frac[d] = 0.0
            if m < 2:
                continue
            x = queries[q, d]
            if x < axes[d, 0]:
                x = axes[d, 0]
            if x > axes[d, m - 1]:
                x = axes[d, m - 1]
            # rightmost i with axes[i] <= x, capped at m - 2
            a, b = 0, m
            while a < b:
                mid = (a + b) // 2
                if axes[d, mid] <= x:
                    a = mid + 1
                else:
                    b = mid
            i = a - 1
            if i < 0:
                i = 0
            if i > m - 2:
                i = m - 2
            lo[d] = i
            frac[d] = (x - axes[d, i]) / (axes[d, i + 1] - axes[d, i])
        acc = 0.0
        for corner in range(1 << MAX_AXES):
            wgt = 1.0
            idx = 0
            skip = False
            for d in range(MAX_AXES):
                bit = (corner >> d) & 1
                if lens[d] < 2:
                    if bit:
                        skip = True
                        break
                    continue
                if bit:
                    wgt = wgt * frac[d]
                    idx += (lo[d] + 1) * strides[d]
                else:
                    wgt = wgt * (1.0 - frac[d])
                    idx += lo[d] * strides[d]
            if skip:
                continue
            acc = acc + wgt * values[idx]
        out[q] = acc
    return out


def _stage_latency_loop(first, rest, res, cin0, depth, k, w, e, out):
    n, dmax = w.shape
    for i in range(n):
        r = res[i]
        acc = first[r, cin0[i], w[i, 0], k[i, 0], e[i, 0]]
        for j in range(1, dmax):
            if j < depth[i]:
                acc = acc + rest[r, w[i, j - 1], w[i, j], k[i, j], e[i, j]]
            else:
                acc = acc + 0.0
        out[i] += acc


def _stage_loss_loop(layer, depth_term, didx, depth, k, w, e, out):
    n, dmax = w.shape
    for i in range(n):
        acc = depth_term[didx[i]]
        for j in range(dmax):
            if j < depth[i]:
                acc = acc + layer[k[i, j], w[i, j], e[i, j]]
            else:
                acc = acc + 0.0
        out[i] += acc


BACKEND = "numpy"
interp = interp_np
stage_latency = stage_latency_np
stage_loss = stage_loss_np

if _numba_requested():
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass
    else:
        interp = njit(cache=True)(_interp_loop)
        stage_latency = njit(cache=True)(_stage_latency_loop)
        stage_loss = njit(cache=True)(_stage_loss_loop)
        BACKEND = "numba"


def backends() -> dict[str, tuple]:
    """All available implementations, keyed by backend name."""
    out = {"numpy": (interp_np, stage_latency_np, stage_loss_np)}
    if BACKEND == "numba":
        out["numba"] = (interp, stage_latency, stage_loss)
    return out
