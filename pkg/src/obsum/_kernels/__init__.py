"""Kernel backend selection: compiled extension or NumPy fallback.

The compiled module is preferred when importable; set OBSUM_NO_EXT=1 to
force the fallback (used by the benchmark and the parity tests).  Both
backends implement identical semantics, so swapping them never changes
results, only speed.
"""

from __future__ import annotations

import os

import numpy as np

from obsum._kernels import fallback as _fallback

if os.environ.get("OBSUM_NO_EXT", "") not in ("", "0"):
    _backend = _fallback
else:
    try:
        from obsum._kernels import _core as _backend  # type: ignore
    except ImportError:
        _backend = _fallback


def backend_name() -> str:
    return _backend.BACKEND


def ohi_map(labels: np.ndarray, s: int, threads: int | None = None):
    labels = np.ascontiguousarray(labels, dtype=np.int32)
    return _backend.ohi_map(labels, int(s), threads)


def plr_map(fine: np.ndarray, resid: np.ndarray, w_s: int, n_s: int,
            threads: int | None = None):
    fine = np.ascontiguousarray(fine, dtype=np.float64)
    resid = np.ascontiguousarray(resid, dtype=np.float64)
    return _backend.plr_map(fine, resid, int(w_s), int(n_s), threads)


def fh_segment(edge_a, edge_b, order, weights, n_nodes: int, scale: float):
    edge_a = np.ascontiguousarray(edge_a, dtype=np.int64)
    edge_b = np.ascontiguousarray(edge_b, dtype=np.int64)
    order = np.ascontiguousarray(order, dtype=np.int64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    return _backend.fh_segment(edge_a, edge_b, order, weights,
                               int(n_nodes), float(scale))


def split_components(labels, valid):
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    valid = np.ascontiguousarray(valid, dtype=np.uint8)
    return _backend.split_components(labels, valid)
