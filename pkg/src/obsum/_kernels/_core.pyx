# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: OHI windows, similar-pixel residuals, segmentation.

Same semantics, tie-breaking, and accumulation order as the NumPy fallback
module; outputs are bit-identical regardless of thread count because every
parallel iteration writes a disjoint output row.
"""

import numpy as np

cimport numpy as cnp
cimport openmp
from cython.parallel cimport prange
from libc.math cimport INFINITY, fabs, sqrt

cnp.import_array()

BACKEND = "compiled"


def _num_threads(threads):
    if threads is None or int(threads) <= 0:
        return openmp.omp_get_max_threads()
    return int(threads)


def ohi_map(cnp.int32_t[:, ::1] labels, int s, threads=None):
    """Fraction of the s x s window sharing the center pixel's object id."""
    cdef int h = labels.shape[0]
    cdef int w = labels.shape[1]
    cdef int lo = -(s // 2)
    cdef int hi = s - s // 2 - 1
    cdef int nt = _num_threads(threads)
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef int i, j, dy, dx, y0, y1, x0, x1, yy, xx
    cdef long same, count
    cdef cnp.int32_t target
    for i in prange(h, nogil=True, schedule="static", num_threads=nt):
        y0 = i + lo
        if y0 < 0:
            y0 = 0
        y1 = i + hi
        if y1 > h - 1:
            y1 = h - 1
        for j in range(w):
            x0 = j + lo
            if x0 < 0:
                x0 = 0
            x1 = j + hi
            if x1 > w - 1:
                x1 = w - 1
            target = labels[i, j]
            same = 0
            count = 0
            for yy in range(y0, y1 + 1):
                for xx in range(x0, x1 + 1):
                    count = count + 1
                    if labels[yy, xx] == target:
                        same = same + 1
            out[i, j] = (<double> same) / (<double> count)
    return out_arr


def plr_map(double[:, :, ::1] fine, double[:, :, ::1] resid, int w_s,
            int n_s, threads=None):
    """Similar-pixel weighted residual for every fine pixel.

    Selection key is (spectral distance, squared offset, flat index),
    ascending; weights are 1/(1 + d/(w_s/2)) normalized over the selected
    pixels, accumulated sequentially in rank order.
    """
    cdef int h = fine.shape[0]
    cdef int w = fine.shape[1]
    cdef int nb = fine.shape[2]
    cdef int half = (w_s - 1) // 2
    cdef double denom = w_s / 2.0
    cdef int n_sel = n_s
    if n_sel > w_s * w_s:
        n_sel = w_s * w_s
    cdef int nt = _num_threads(threads)
    out_arr = np.zeros((h, w, nb), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr

    # per-thread scratch: selection lists, weights, target spectrum;
    # rows padded past a cache line so threads never share one
    cdef int pad = ((n_sel + 7) // 8 + 1) * 8
    cdef int pad_t = ((nb + 7) // 8 + 1) * 8
    scratch_s_arr = np.empty((nt, pad), dtype=np.float64)
    scratch_d_arr = np.empty((nt, pad), dtype=np.int64)
    scratch_f_arr = np.empty((nt, pad), dtype=np.int64)
    scratch_w_arr = np.empty((nt, pad), dtype=np.float64)
    scratch_t_arr = np.empty((nt, pad_t), dtype=np.float64)
    cdef double[:, ::1] sc_s = scratch_s_arr
    cdef cnp.int64_t[:, ::1] sc_d = scratch_d_arr
    cdef cnp.int64_t[:, ::1] sc_f = scratch_f_arr
    cdef double[:, ::1] sc_w = scratch_w_arr
    cdef double[:, ::1] sc_t = scratch_t_arr

    cdef const double* fine_p = &fine[0, 0, 0]
    cdef const double* resid_p = &resid[0, 0, 0]
    cdef const double* row_p
    cdef double* tgt_p

    cdef int i, j, b, dy, dx, y0, y1, x0, x1, yy, xx, tid, count, pos, k
    cdef long d2, fidx, roff
    cdef double acc, s_val, total, invd, wgt, worst, acc_out, reject
    cdef bint worse, full

    for i in prange(h, nogil=True, schedule="static", num_threads=nt):
        tid = openmp.omp_get_thread_num()
        tgt_p = &sc_t[tid, 0]
        y0 = i - half
        if y0 < 0:
            y0 = 0
        y1 = i + half
        if y1 > h - 1:
            y1 = h - 1
        for j in range(w):
            x0 = j - half
            if x0 < 0:
                x0 = 0
            x1 = j + half
            if x1 > w - 1:
                x1 = w - 1
            for b in range(nb):
                tgt_p[b] = fine_p[((<long> i) * w + j) * nb + b]
            count = 0
            full = False
            worst = 0.0
            # certain-rejection threshold on the band-difference sum:
            # acc > worst*nb*(1+1e-15) guarantees acc/nb rounds above
            # worst, so the exact division can be skipped
            reject = INFINITY
            for yy in range(y0, y1 + 1):
                dy = yy - i
                row_p = fine_p + ((<long> yy) * w + x0) * nb
                for xx in range(x0, x1 + 1):
                    acc = fabs(row_p[0] - tgt_p[0])
                    for b in range(1, nb):
                        acc = acc + fabs(row_p[b] - tgt_p[b])
                    row_p = row_p + nb
                    if acc > reject:
                        continue
                    s_val = acc / nb
                    if full and s_val > worst:
                        continue
                    dx = xx - j
                    d2 = <long> (dy * dy + dx * dx)
                    fidx = (<long> yy) * w + xx
                    if full:
                        # s_val <= worst; resolve ties against the tail
                        worse = False
                        if s_val == sc_s[tid, count - 1]:
                            if d2 > sc_d[tid, count - 1]:
                                worse = True
                            elif d2 == sc_d[tid, count - 1] and \
                                    fidx > sc_f[tid, count - 1]:
                                worse = True
                        if worse:
                            continue
                        pos = count - 1
                    else:
                        pos = count
                        count = count + 1
                        full = count == n_sel
                    while pos > 0:
                        if s_val > sc_s[tid, pos - 1]:
                            break
                        if s_val == sc_s[tid, pos - 1]:
                            if d2 > sc_d[tid, pos - 1]:
                                break
                            if d2 == sc_d[tid, pos - 1] and \
                                    fidx > sc_f[tid, pos - 1]:
                                break
                        sc_s[tid, pos] = sc_s[tid, pos - 1]
                        sc_d[tid, pos] = sc_d[tid, pos - 1]
                        sc_f[tid, pos] = sc_f[tid, pos - 1]
                        pos = pos - 1
                    sc_s[tid, pos] = s_val
                    sc_d[tid, pos] = d2
                    sc_f[tid, pos] = fidx
                    if full:
                        worst = sc_s[tid, count - 1]
                        reject = worst * nb * (1.0 + 1e-15)
            total = 0.0
            for k in range(count):
                invd = 1.0 / (1.0 + sqrt(<double> sc_d[tid, k]) / denom)
                sc_w[tid, k] = invd
                total = total + invd
            for b in range(nb):
                acc_out = 0.0
                for k in range(count):
                    wgt = sc_w[tid, k] / total
                    roff = sc_f[tid, k] * nb + b
                    acc_out = acc_out + wgt * resid_p[roff]
                out[i, j, b] = acc_out
    return out_arr


cdef long _find(cnp.int64_t[::1] parent, long i) nogil:
    cdef long root = i
    cdef long nxt
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


def fh_segment(cnp.int64_t[::1] edge_a, cnp.int64_t[::1] edge_b,
               cnp.int64_t[::1] order, double[::1] weights, long n_nodes,
               double scale):
    """Graph-based segmentation main loop over pre-sorted edges."""
    parent_arr = np.arange(n_nodes, dtype=np.int64)
    size_arr = np.ones(n_nodes, dtype=np.int64)
    internal_arr = np.zeros(n_nodes, dtype=np.float64)
    cdef cnp.int64_t[::1] parent = parent_arr
    cdef cnp.int64_t[::1] size = size_arr
    cdef double[::1] internal = internal_arr
    cdef long n_edges = order.shape[0]
    cdef long e, idx, a, b, root, child
    cdef double wgt
    with nogil:
        for idx in range(n_edges):
            e = order[idx]
            a = _find(parent, edge_a[e])
            b = _find(parent, edge_b[e])
            if a == b:
                continue
            wgt = weights[e]
            if wgt <= internal[a] + scale / size[a] and \
                    wgt <= internal[b] + scale / size[b]:
                if a < b:
                    root = a
                    child = b
                else:
                    root = b
                    child = a
                parent[child] = root
                size[root] = size[root] + size[child]
                internal[root] = wgt
        for idx in range(n_nodes):
            parent[idx] = _find(parent, idx)
    return parent_arr


def split_components(cnp.int64_t[:, ::1] labels, cnp.uint8_t[:, ::1] valid):
    """Roots of 4-connected components of equal, valid label values."""
    cdef long h = labels.shape[0]
    cdef long w = labels.shape[1]
    cdef long n = h * w
    parent_arr = np.arange(n, dtype=np.int64)
    cdef cnp.int64_t[::1] parent = parent_arr
    cdef long y, x, i, ra, rb
    with nogil:
        for y in range(h):
            for x in range(w):
                i = y * w + x
                if not valid[y, x]:
                    continue
                if x + 1 < w and valid[y, x + 1] and \
                        labels[y, x] == labels[y, x + 1]:
                    ra = _find(parent, i)
                    rb = _find(parent, i + 1)
                    if ra != rb:
                        if ra < rb:
                            parent[rb] = ra
                        else:
                            parent[ra] = rb
                if y + 1 < h and valid[y + 1, x] and \
                        labels[y, x] == labels[y + 1, x]:
                    ra = _find(parent, i)
                    rb = _find(parent, i + w)
                    if ra != rb:
                        if ra < rb:
                            parent[rb] = ra
                        else:
                            parent[ra] = rb
        for i in range(n):
            parent[i] = _find(parent, i)
    return parent_arr.reshape(h, w)
