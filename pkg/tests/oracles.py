"""Independent brute-force reference implementations used as test oracles.

Each function is written straight from the definitions, with plain loops,
and is kept independent of the library code paths it checks.
"""

import itertools

import numpy as np


def naive_ohi(labels, s):
    h, w = labels.shape
    lo, hi = -(s // 2), s - s // 2 - 1
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            same = m = 0
            for dy in range(lo, hi + 1):
                for dx in range(lo, hi + 1):
                    y, x = i + dy, j + dx
                    if 0 <= y < h and 0 <= x < w:
                        m += 1
                        same += labels[y, x] == labels[i, j]
            out[i, j] = same / m
    return out


def naive_plr(fine, resid, w_s, n_s):
    """Similar-pixel residual combination: naive double loop over windows."""
    h, w, nb = fine.shape
    half = (w_s - 1) // 2
    denom = w_s / 2.0
    out = np.zeros((h, w, nb))
    for i in range(h):
        for j in range(w):
            cands = []
            for dy in range(-half, half + 1):
                for dx in range(-half, half + 1):
                    y, x = i + dy, j + dx
                    if not (0 <= y < h and 0 <= x < w):
                        continue
                    acc = 0.0
                    for b in range(nb):
                        acc = acc + abs(fine[y, x, b] - fine[i, j, b])
                    cands.append((acc / nb, dy * dy + dx * dx, y * w + x))
            cands.sort()
            sel = cands[:min(n_s, len(cands))]
            total = 0.0
            invd = []
            for _, d2, _ in sel:
                v = 1.0 / (1.0 + np.sqrt(float(d2)) / denom)
                invd.append(v)
                total = total + v
            for b in range(nb):
                acc = 0.0
                for (_, _, fidx), v in zip(sel, invd):
                    acc = acc + (v / total) * resid[fidx // w, fidx % w, b]
                out[i, j, b] = acc
    return out


def naive_ssim(x, y, size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean local SSIM: per-window loop straight from the definition."""
    offsets = np.arange(size) - (size - 1) / 2.0
    g1 = np.exp(-(offsets ** 2) / (2 * sigma * sigma))
    g1 /= g1.sum()
    kernel = np.outer(g1, g1)
    h, w = x.shape
    c1, c2 = k1 ** 2, k2 ** 2
    vals = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            wx = x[i:i + size, j:j + size]
            wy = y[i:i + size, j:j + size]
            mx = np.sum(kernel * wx)
            my = np.sum(kernel * wy)
            vx = np.sum(kernel * wx * wx) - mx * mx
            vy = np.sum(kernel * wy * wy) - my * my
            cxy = np.sum(kernel * wx * wy) - mx * my
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def enumerate_box_solution(A, y, lower=0.0, upper=1.0):
    """Exhaustive active-set enumeration of the box-constrained LS problem.

    Tries every {lower, upper, free} assignment, solving the free
    subproblem unconstrained and keeping the best feasible candidate.
    Only practical for a few variables.
    """
    m, n = A.shape
    best = None
    best_obj = np.inf
    for config in itertools.product((-1, 0, 1), repeat=n):
        x = np.empty(n)
        free = [j for j, c in enumerate(config) if c == 0]
        for j, c in enumerate(config):
            if c == -1:
                x[j] = lower
            elif c == 1:
                x[j] = upper
        if free:
            Af = A[:, free]
            rhs = y - A @ np.where(np.array(config) == 0, 0.0, x)
            z, *_ = np.linalg.lstsq(Af, rhs, rcond=None)
            if (z < lower - 1e-9).any() or (z > upper + 1e-9).any():
                continue
            x[free] = np.clip(z, lower, upper)
        obj = float(np.sum((A @ x - y) ** 2))
        if obj < best_obj - 1e-15:
            best_obj = obj
            best = x.copy()
    return best, best_obj
