"""Object-level unmixing: recover per-class reflectance inside coarse pixels.

Each coarse pixel's reflectance is modeled as the fraction-weighted sum of
its land-cover classes' reflectance.  A sliding window of coarse pixels
(stride 1, shrunk at the borders) builds an overdetermined system per band
that a bounded least-squares solve inverts; the per-class values are
assigned to the fine pixels of each coarse pixel and finally averaged over
every image object, which removes block footprints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from obsum.bvls import SolverError, bvls
from obsum.preprocess import ClassMap, ObjectMap
from obsum.raster import Raster, RasterDescriptor, RasterError, _scaled_geo


class UnmixError(ValueError):
    """Invalid unmixing inputs or an unsolvable window system."""


@dataclass
class FractionCube:
    """Per-coarse-pixel class fractions, shape (rows, cols, n_classes)."""

    fractions: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.fractions = np.asarray(self.fractions, dtype=np.float64)
        if self.fractions.ndim != 3 or \
                self.fractions.shape[2] != self.n_classes:
            raise UnmixError("fraction cube must be (rows, cols, classes)")

    @property
    def shape(self):
        return self.fractions.shape


@dataclass
class WindowSolution:
    """Unmixed class reflectance for one window: values is (bands, classes).

    Classes with zero total fraction inside the window cannot be estimated
    and are flagged unsolved; their value entries are 0.
    """

    center: tuple[int, int]
    values: np.ndarray
    solved: np.ndarray


def class_fractions(refined: ClassMap, s: int) -> FractionCube:
    """Count the proportion of each class inside every s x s block."""
    h, w = refined.shape
    if h % s or w % s:
        raise UnmixError(
            f"class map dimensions {h}x{w} not divisible by scale {s}")
    hc, wc = h // s, w // s
    n_c = refined.n_classes
    rows = np.arange(h) // s
    cols = np.arange(w) // s
    coarse_idx = rows[:, None] * wc + cols[None, :]
    joint = coarse_idx.ravel() * n_c + refined.labels.ravel()
    counts = np.bincount(joint, minlength=hc * wc * n_c)
    fractions = counts.reshape(hc, wc, n_c) / float(s * s)
    return FractionCube(fractions, n_c)


def _solve_window(coarse: np.ndarray, fractions: np.ndarray,
                  valid: np.ndarray, ci: int, cj: int, w: int):
    """Bounded least-squares solve for the window centered on (ci, cj).

    Returns (values (bands, n_c), solved (n_c,)).  Masked coarse pixels
    contribute no equation; windows are shrunk at the image borders.
    """
    hc, wc, n_c = fractions.shape
    half = (w - 1) // 2
    r0, r1 = max(0, ci - half), min(hc, ci + half + 1)
    c0, c1 = max(0, cj - half), min(wc, cj + half + 1)
    a_full = fractions[r0:r1, c0:c1].reshape(-1, n_c)
    y_full = coarse[r0:r1, c0:c1].reshape(-1, coarse.shape[2])
    keep = valid[r0:r1, c0:c1].ravel()
    a_full = a_full[keep]
    y_full = y_full[keep]
    if a_full.shape[0] == 0:
        raise UnmixError(
            f"unmixing window at ({ci}, {cj}) is fully masked")
    present = a_full.sum(axis=0) > 0.0
    bands = y_full.shape[1]
    values = np.zeros((bands, n_c))
    a = a_full[:, present]
    for b in range(bands):
        try:
            values[b, present] = bvls(a, y_full[:, b])
        except SolverError as exc:
            raise UnmixError(
                f"unmixing window at ({ci}, {cj}), band {b}: {exc}"
            ) from exc
    return values, present


def unmix_window(coarse_tp: Raster, fractions: FractionCube,
                 center: tuple[int, int], w: int,
                 valid_mask: np.ndarray | None = None) -> WindowSolution:
    """Solve the class-reflectance system for one window."""
    if w % 2 == 0 or w < 1:
        raise UnmixError(f"window size must be odd and positive, got {w}")
    hc, wc, _ = fractions.shape
    if coarse_tp.shape[:2] != (hc, wc):
        raise UnmixError("coarse raster and fraction cube dimensions differ")
    if valid_mask is None:
        valid_mask = coarse_tp.pixel_valid_mask()
    values, solved = _solve_window(coarse_tp.data.astype(np.float64),
                                   fractions.fractions, valid_mask,
                                   center[0], center[1], w)
    return WindowSolution(center=tuple(center), values=values, solved=solved)


def _global_solution(coarse: np.ndarray, fractions: np.ndarray,
                     valid: np.ndarray):
    """One whole-image system; the fallback for locally unsolvable classes."""
    n_c = fractions.shape[2]
    a_full = fractions.reshape(-1, n_c)
    y_full = coarse.reshape(-1, coarse.shape[2])
    keep = valid.ravel()
    a_full = a_full[keep]
    y_full = y_full[keep]
    present = a_full.sum(axis=0) > 0.0
    bands = y_full.shape[1]
    values = np.zeros((bands, n_c))
    a = a_full[:, present]
    for b in range(bands):
        values[b, present] = bvls(a, y_full[:, b])
    return values, present


def olu_predict(coarse_tp: Raster, refined: ClassMap, objects: ObjectMap,
                s: int, w: int = 11) -> Raster:
    """Object-level unmixing prediction at fine resolution.

    Every fine pixel first receives the unmixed reflectance of its class
    from the window centered on its coarse pixel (fine pixels whose class
    is unsolved there fall back to the class's whole-image solution), then
    each object is replaced by its mean, making the output object-constant.
    """
    if w % 2 == 0 or w < 1:
        raise UnmixError(f"window size must be odd and positive, got {w}")
    if refined.shape != objects.shape:
        raise UnmixError("class map and object map dimensions differ")
    h, wd = refined.shape
    hc, wc, bands = coarse_tp.shape
    if (h, wd) != (hc * s, wc * s):
        raise UnmixError(
            f"fine grid {h}x{wd} is not {s}x the coarse grid {hc}x{wc}")
    cube = class_fractions(refined, s)
    n_c = cube.n_classes
    coarse = coarse_tp.data.astype(np.float64)
    valid = coarse_tp.pixel_valid_mask()
    if not valid.any():
        raise UnmixError("coarse image is fully masked")

    solutions = np.empty((hc, wc, n_c, bands))
    solved = np.empty((hc, wc, n_c), dtype=bool)
    for ci in range(hc):
        for cj in range(wc):
            values, flags = _solve_window(coarse, cube.fractions, valid,
                                          ci, cj, w)
            solutions[ci, cj] = values.T
            solved[ci, cj] = flags

    if not solved.all():
        global_values, global_present = _global_solution(coarse,
                                                         cube.fractions,
                                                         valid)
        for c in range(n_c):
            hole = ~solved[:, :, c]
            if not hole.any():
                continue
            if global_present[c]:
                solutions[:, :, c, :][hole] = global_values[:, c]
            else:
                # class absent everywhere: fall back to the coarse values
                solutions[:, :, c, :][hole] = coarse[hole]

    rows = np.arange(h) // s
    cols = np.arange(wd) // s
    assigned = solutions[rows[:, None], cols[None, :],
                         refined.labels, :]

    flat_obj = objects.labels.ravel()
    counts = np.bincount(flat_obj, minlength=objects.object_count)
    out = np.empty((h, wd, bands))
    for b in range(bands):
        sums = np.bincount(flat_obj, weights=assigned[:, :, b].ravel(),
                           minlength=objects.object_count)
        out[:, :, b] = (sums / counts)[flat_obj].reshape(h, wd)

    desc = RasterDescriptor(width=wd, height=h, bands=bands, nodata=None,
                            geo=_scaled_geo(coarse_tp.descriptor.geo,
                                            1.0 / s))
    return Raster(desc, out)
