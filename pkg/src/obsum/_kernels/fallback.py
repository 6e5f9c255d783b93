"""Pure-NumPy implementations of the hot kernels.

Selected at import time when the compiled extension is unavailable (or when
OBSUM_NO_EXT is set).  Semantics, tie-breaking, and accumulation order match
the compiled kernels bit for bit: spectral distances accumulate over bands in
order, similar pixels are ranked by (spectral distance, squared offset,
flat index), and weighted sums run sequentially in rank order (cumsum).
"""

from __future__ import annotations

import numpy as np

BACKEND = "fallback"


def ohi_map(labels: np.ndarray, s: int, threads: int | None = None):
    """Fraction of the s x s window sharing the center pixel's object id.

    The window spans offsets [-s//2, s - s//2 - 1] on both axes and is
    clipped at the image border, where the denominator shrinks to the
    actual window size.
    """
    labels = np.ascontiguousarray(labels)
    h, w = labels.shape
    lo = -(s // 2)
    hi = s - s // 2 - 1
    same = np.zeros((h, w), dtype=np.int64)
    count = np.zeros((h, w), dtype=np.int64)
    for dy in range(lo, hi + 1):
        ty = slice(max(0, -dy), h - max(0, dy))
        ny = slice(max(0, dy), h + min(0, dy))
        for dx in range(lo, hi + 1):
            tx = slice(max(0, -dx), w - max(0, dx))
            nx = slice(max(0, dx), w + min(0, dx))
            eq = labels[ny, nx] == labels[ty, tx]
            same[ty, tx] += eq
            count[ty, tx] += 1
    return same / count


def plr_map(fine: np.ndarray, resid: np.ndarray, w_s: int, n_s: int,
            threads: int | None = None, row_chunk: int = 4):
    """Similar-pixel weighted residual for every fine pixel.

    For each target pixel the w_s x w_s window (clipped at borders) is
    scanned; the n_s candidates with the smallest mean absolute spectral
    difference to the target in `fine` are selected (ties by squared
    offset, then flat index) and their `resid` values are combined with
    inverse-distance weights 1/(1 + d/(w_s/2)), normalized to sum to 1.
    """
    fine = np.ascontiguousarray(fine, dtype=np.float64)
    resid = np.ascontiguousarray(resid, dtype=np.float64)
    h, w, nb = fine.shape
    half = (w_s - 1) // 2
    denom = w_s / 2.0
    offsets = [(dy, dx) for dy in range(-half, half + 1)
               for dx in range(-half, half + 1)]
    k = len(offsets)
    n_sel = min(n_s, k)
    resid_flat = resid.reshape(h * w, nb)
    out = np.empty((h, w, nb))

    for r0 in range(0, h, row_chunk):
        r1 = min(r0 + row_chunk, h)
        rows = r1 - r0
        p = rows * w
        spec = np.full((p, k), np.inf)
        d2 = np.full((p, k), np.iinfo(np.int32).max, dtype=np.int32)
        fidx = np.full((p, k), np.iinfo(np.int64).max, dtype=np.int64)
        for ci, (dy, dx) in enumerate(offsets):
            sy0 = max(r0, -dy)
            sy1 = min(r1, h - dy)
            if sy0 >= sy1:
                continue
            tx0 = max(0, -dx)
            tx1 = min(w, w - dx)
            if tx0 >= tx1:
                continue
            tgt = fine[sy0:sy1, tx0:tx1, :]
            nbr = fine[sy0 + dy:sy1 + dy, tx0 + dx:tx1 + dx, :]
            acc = np.abs(nbr[..., 0] - tgt[..., 0])
            for b in range(1, nb):
                acc = acc + np.abs(nbr[..., b] - tgt[..., b])
            s_val = acc / nb
            block = np.full((rows, w), np.inf)
            block[sy0 - r0:sy1 - r0, tx0:tx1] = s_val
            spec[:, ci] = block.reshape(p)
            fblock = np.full((rows, w), np.iinfo(np.int64).max,
                             dtype=np.int64)
            ys = np.arange(sy0 + dy, sy1 + dy)[:, None]
            xs = np.arange(tx0 + dx, tx1 + dx)[None, :]
            fblock[sy0 - r0:sy1 - r0, tx0:tx1] = ys * w + xs
            fidx[:, ci] = fblock.reshape(p)
            dblock = np.full((rows, w), np.iinfo(np.int32).max,
                             dtype=np.int32)
            dblock[sy0 - r0:sy1 - r0, tx0:tx1] = dy * dy + dx * dx
            d2[:, ci] = dblock.reshape(p)

        order = np.lexsort((fidx, d2, spec), axis=-1)[:, :n_sel]
        sel_spec = np.take_along_axis(spec, order, axis=1)
        sel_d2 = np.take_along_axis(d2, order, axis=1)
        sel_idx = np.take_along_axis(fidx, order, axis=1)
        valid = np.isfinite(sel_spec)
        invd = 1.0 / (1.0 + np.sqrt(sel_d2.astype(np.float64)) / denom)
        invd[~valid] = 0.0
        total = np.cumsum(invd, axis=1)[:, -1]
        weight = invd / total[:, None]
        sel_idx = np.where(valid, sel_idx, 0)
        contrib = weight[:, :, None] * resid_flat[sel_idx]
        contrib[~valid] = 0.0
        out.reshape(h * w, nb)[r0 * w:r1 * w] = \
            np.cumsum(contrib, axis=1)[:, -1, :]
    return out


def fh_segment(edge_a: np.ndarray, edge_b: np.ndarray, order: np.ndarray,
               weights: np.ndarray, n_nodes: int, scale: float):
    """Graph-based segmentation main loop over pre-sorted edges.

    Merges two components when the joining edge weight does not exceed
    either component's internal difference plus scale/size.  Returns the
    root node of each pixel's component.
    """
    parent = np.arange(n_nodes, dtype=np.int64)
    size = np.ones(n_nodes, dtype=np.int64)
    internal = np.zeros(n_nodes)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    for e in order:
        a = find(int(edge_a[e]))
        b = find(int(edge_b[e]))
        if a == b:
            continue
        wgt = weights[e]
        if wgt <= internal[a] + scale / size[a] and \
           wgt <= internal[b] + scale / size[b]:
            root, child = (a, b) if a < b else (b, a)
            parent[child] = root
            size[root] += size[child]
            internal[root] = wgt
    return np.array([find(i) for i in range(n_nodes)], dtype=np.int64)


def split_components(labels: np.ndarray, valid: np.ndarray):
    """Roots of 4-connected components of equal, valid label values.

    Invalid pixels never join a component and end up as singletons.
    """
    h, w = labels.shape
    n = h * w
    flat_labels = labels.reshape(n)
    flat_valid = valid.reshape(n).astype(bool)
    parent = np.arange(n, dtype=np.int64)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            if ri < rj:
                parent[rj] = ri
            else:
                parent[ri] = rj

    for y in range(h):
        base = y * w
        for x in range(w):
            i = base + x
            if not flat_valid[i]:
                continue
            if x + 1 < w and flat_valid[i + 1] and \
                    flat_labels[i] == flat_labels[i + 1]:
                union(i, i + 1)
            if y + 1 < h and flat_valid[i + w] and \
                    flat_labels[i] == flat_labels[i + w]:
                union(i, i + w)
    return np.array([find(i) for i in range(n)],
                    dtype=np.int64).reshape(h, w)
