"""Residual compensation: object-level and pixel-level stages, diagnostics.

The unmixing prediction is compared against the coarse image at coarse
scale; the difference is interpolated back to fine scale.  The object-level
stage picks, inside each object, the fine residual cells most likely to
equal the object's true residual (high object-homogeneity, close to their
coarse pixel center) and adds their weighted mean to the whole object.
The pixel-level stage then redistributes the remaining residual through
spectrally similar neighbors, recovering within-object change.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from obsum import _kernels
from obsum.preprocess import ObjectMap
from obsum.raster import (Raster, RasterDescriptor, RasterError,
                          bicubic_downscale, block_mean_upscale)

RESIDUAL_NODATA = -9999.0


class ResidualError(ValueError):
    """Invalid residual-compensation inputs."""


@dataclass
class ResidualMaps:
    """Coarse-scale residuals and their fine-scale interpolation."""

    coarse: Raster
    fine: Raster


@dataclass
class OriMaps:
    """Distance-to-center, object homogeneity, and their ratio."""

    dc: np.ndarray
    ohi: np.ndarray
    ori: np.ndarray


@dataclass
class SimilarPixelSet:
    """Selected neighbors of one target pixel, in selection order."""

    target: tuple[int, int]
    coords: np.ndarray    # (k, 2) row, col
    spectral: np.ndarray  # mean absolute band difference to the target
    spatial: np.ndarray   # relative distance, in [1, 1 + sqrt(2)]
    weights: np.ndarray   # inverse-distance weights, sum to 1


def compute_residuals(coarse_tp: Raster, prediction: Raster,
                      s: int) -> ResidualMaps:
    """Coarse residuals (image minus upscaled prediction) and their
    bicubic fine-scale interpolation, clamped to [-1, 1].

    Masked coarse pixels stay nodata at coarse scale; at fine scale they
    contribute zero (gap cells that no valid neighbor reaches become 0).
    """
    hc, wc, bands = coarse_tp.shape
    if prediction.shape != (hc * s, wc * s, bands):
        raise ResidualError(
            f"prediction {prediction.shape} does not match coarse "
            f"{coarse_tp.shape} at scale {s}")
    pred_up = block_mean_upscale(prediction, s)
    valid = coarse_tp.valid_mask()
    resid = np.where(valid,
                     coarse_tp.data.astype(np.float64) - pred_up.data,
                     RESIDUAL_NODATA)
    nodata = None if valid.all() else RESIDUAL_NODATA
    coarse_resid = Raster(
        RasterDescriptor(width=wc, height=hc, bands=bands, nodata=nodata,
                         geo=coarse_tp.descriptor.geo), resid)
    fine_resid = bicubic_downscale(coarse_resid, s)
    fine_data = fine_resid.data
    if nodata is not None:
        fine_data = np.where(fine_data == RESIDUAL_NODATA, 0.0, fine_data)
    fine = Raster(
        RasterDescriptor(width=wc * s, height=hc * s, bands=bands,
                         nodata=None, geo=fine_resid.descriptor.geo),
        fine_data)
    return ResidualMaps(coarse=coarse_resid, fine=fine)


def compute_dc(s: int) -> np.ndarray:
    """Relative distance of each fine pixel to its coarse pixel's center.

    Returns one s x s tile (identical for every coarse pixel) with values
    1 + d/(s/2) where d is the Euclidean offset from the block center at
    ((s-1)/2, (s-1)/2); the range is [1, 1 + sqrt(2)).
    """
    if s < 2:
        raise ResidualError(f"scale factor must be >= 2, got {s}")
    center = (s - 1) / 2.0
    u = np.arange(s) - center
    dist = np.sqrt(u[:, None] ** 2 + u[None, :] ** 2)
    return 1.0 + dist / (s / 2.0)


def replicate_dc(tile: np.ndarray, coarse_shape: tuple[int, int]):
    """Tile the per-coarse-pixel DC pattern over the full fine grid."""
    return np.tile(tile, coarse_shape)


def compute_ohi(objects: ObjectMap, s: int,
                threads: int | None = None) -> np.ndarray:
    """Fraction of each pixel's coarse-footprint window (s x s, clipped at
    borders) that belongs to the pixel's own object."""
    if s < 2:
        raise ResidualError(f"scale factor must be >= 2, got {s}")
    return _kernels.ohi_map(objects.labels, s, threads)


def compute_ori(ohi: np.ndarray, dc: np.ndarray) -> np.ndarray:
    """Object residual index: homogeneity divided by center distance."""
    if ohi.shape != dc.shape:
        raise ResidualError(
            f"OHI {ohi.shape} and DC {dc.shape} dimensions differ")
    return ohi / dc


def build_ori_maps(objects: ObjectMap, s: int,
                   threads: int | None = None) -> OriMaps:
    hc = objects.shape[0] // s
    wc = objects.shape[1] // s
    dc = replicate_dc(compute_dc(s), (hc, wc))
    ohi = compute_ohi(objects, s, threads)
    return OriMaps(dc=dc, ohi=ohi, ori=compute_ori(ohi, dc))


def olrc_compensate(olu: Raster, residuals: ResidualMaps, ori: np.ndarray,
                    objects: ObjectMap, or_percent: float = 15.0) -> Raster:
    """Add a single reconstructed residual to every object.

    Inside each object the max(1, round(or_percent% of its pixels)) cells
    with the highest ORI are selected (ties to the lowest pixel index) and
    their fine residuals are combined with ORI-proportional weights; a zero
    ORI sum falls back to uniform weights.  The result is clamped to [0, 1].
    """
    if not 0.0 < or_percent <= 100.0:
        raise ResidualError(
            f"or_percent must be in (0, 100], got {or_percent}")
    h, w, bands = olu.shape
    if ori.shape != (h, w) or objects.shape != (h, w):
        raise ResidualError("ORI / object map dimensions do not match the "
                            "prediction")
    r1 = residuals.fine.data
    if r1.shape != olu.shape:
        raise ResidualError("fine residual dimensions do not match the "
                            "prediction")
    n_obj = objects.object_count
    flat_obj = objects.labels.ravel().astype(np.int64)
    flat_ori = ori.ravel()
    sizes = np.bincount(flat_obj, minlength=n_obj)
    n_sel = np.maximum(1, np.floor(or_percent / 100.0 * sizes + 0.5)
                       .astype(np.int64))

    order = np.lexsort((np.arange(flat_obj.size), -flat_ori, flat_obj))
    sorted_obj = flat_obj[order]
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    rank = np.arange(flat_obj.size) - starts[sorted_obj]
    keep = rank < n_sel[sorted_obj]
    sel_pix = order[keep]
    sel_obj = sorted_obj[keep]
    sel_ori = flat_ori[sel_pix]

    ori_sums = np.bincount(sel_obj, weights=sel_ori, minlength=n_obj)
    uniform = ori_sums[sel_obj] <= 0.0
    weights = np.where(uniform, 1.0 / n_sel[sel_obj],
                       sel_ori / np.where(ori_sums[sel_obj] > 0.0,
                                          ori_sums[sel_obj], 1.0))

    r1_flat = r1.reshape(h * w, bands)
    object_residual = np.empty((n_obj, bands))
    for b in range(bands):
        object_residual[:, b] = np.bincount(
            sel_obj, weights=weights * r1_flat[sel_pix, b],
            minlength=n_obj)

    out = olu.data.astype(np.float64) \
        + object_residual[objects.labels.ravel()].reshape(h, w, bands)
    np.clip(out, 0.0, 1.0, out=out)
    return olu.with_data(out, drop_nodata=True)


def warn_fully_masked_objects(objects: ObjectMap, coarse_tp: Raster,
                              s: int) -> np.ndarray:
    """Objects whose every overlapping coarse pixel is masked.

    Such objects receive no observed residual signal (their reconstructed
    residual is 0); a warning records them.
    """
    valid = coarse_tp.pixel_valid_mask()
    fine_valid = np.repeat(np.repeat(valid, s, axis=0), s, axis=1)
    seen = np.bincount(objects.labels.ravel(),
                       weights=fine_valid.ravel().astype(np.float64),
                       minlength=objects.object_count)
    dead = np.flatnonzero(seen == 0)
    if dead.size:
        warnings.warn(
            f"{dead.size} object(s) are covered only by masked coarse "
            "pixels; their object-level residual is 0", stacklevel=2)
    return dead


def select_similar_pixels(fine_tb: Raster, target: tuple[int, int],
                          w_s: int = 31, n_s: int = 30) -> SimilarPixelSet:
    """Rank the w_s x w_s neighborhood of one pixel by spectral closeness.

    Reference implementation of the selection the pixel-level stage runs
    for every pixel: the n_s smallest mean-absolute-difference neighbors
    (the target itself always qualifies with distance 0; ties break by
    spatial distance, then flat pixel index) weighted by inverse relative
    distance 1/(1 + d/(w_s/2)), normalized to sum to 1.
    """
    if w_s % 2 == 0 or w_s < 1:
        raise ResidualError(f"w_s must be odd and positive, got {w_s}")
    if n_s < 1:
        raise ResidualError(f"n_s must be >= 1, got {n_s}")
    h, w, nb = fine_tb.shape
    ti, tj = target
    if not (0 <= ti < h and 0 <= tj < w):
        raise ResidualError(f"target {target} outside the image")
    half = (w_s - 1) // 2
    data = fine_tb.data.astype(np.float64)
    cands = []
    for y in range(max(0, ti - half), min(h, ti + half + 1)):
        for x in range(max(0, tj - half), min(w, tj + half + 1)):
            acc = 0.0
            for b in range(nb):
                acc += abs(data[y, x, b] - data[ti, tj, b])
            d2 = (y - ti) ** 2 + (x - tj) ** 2
            cands.append((acc / nb, d2, y * w + x))
    cands.sort()
    sel = cands[:min(n_s, len(cands))]
    denom = w_s / 2.0
    spatial = np.array([1.0 + np.sqrt(float(d2)) / denom
                        for _, d2, _ in sel])
    invd = 1.0 / spatial
    weights = invd / invd.sum()
    coords = np.array([(f // w, f % w) for _, _, f in sel], dtype=np.int64)
    spectral = np.array([sv for sv, _, _ in sel])
    return SimilarPixelSet(target=(ti, tj), coords=coords,
                           spectral=spectral, spatial=spatial,
                           weights=weights)


def plrc_compensate(olrc: Raster, coarse_tp: Raster, fine_tb: Raster,
                    s: int, w_s: int = 31, n_s: int = 30,
                    threads: int | None = None) -> Raster:
    """Pixel-level residual compensation.

    Residuals are recomputed against the object-compensated prediction,
    interpolated to fine scale, and each pixel receives the weighted
    residual of its spectrally similar neighbors.  Clamped to [0, 1].
    """
    if w_s % 2 == 0 or w_s < 1:
        raise ResidualError(f"w_s must be odd and positive, got {w_s}")
    if n_s < 1:
        raise ResidualError(f"n_s must be >= 1, got {n_s}")
    if fine_tb.shape != olrc.shape:
        raise ResidualError("base fine image and prediction dimensions "
                            "differ")
    maps = compute_residuals(coarse_tp, olrc, s)
    plr = _kernels.plr_map(fine_tb.data, maps.fine.data, w_s, n_s, threads)
    out = olrc.data.astype(np.float64) + plr
    np.clip(out, 0.0, 1.0, out=out)
    return olrc.with_data(out, drop_nodata=True)


# ------------------------------------------------------------- diagnostics

@dataclass
class MapStats:
    mean: float
    std: float
    minimum: float
    maximum: float


@dataclass
class ResidualDiagnostics:
    """Residual maps of a full run plus their correlation structure.

    Correlations are Pearson r pooled over pixels and bands; pairs with a
    constant member are reported as None (printed as 'undefined').
    """

    maps: dict[str, np.ndarray] = field(repr=False)
    stats: dict[str, MapStats]
    correlations: dict[str, dict[str, float | None]]

    def to_text(self) -> str:
        lines = ["residual map statistics", ""]
        lines.append(f"{'map':<22}{'mean':>12}{'std':>12}"
                     f"{'min':>12}{'max':>12}")
        for name, st in self.stats.items():
            lines.append(f"{name:<22}{st.mean:>12.6f}{st.std:>12.6f}"
                         f"{st.minimum:>12.6f}{st.maximum:>12.6f}")
        lines.append("")
        lines.append("correlation (r) against reference residual maps")
        lines.append("")
        cols = list(next(iter(self.correlations.values())).keys())
        header = f"{'reference':<18}" + "".join(f"{c:>18}" for c in cols)
        lines.append(header)
        for ref, row in self.correlations.items():
            cells = "".join(
                f"{('undefined' if v is None else format(v, '.5f')):>18}"
                for v in row.values())
            lines.append(f"{ref:<18}" + cells)
        return "\n".join(lines) + "\n"


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    a = a.ravel().astype(np.float64)
    b = b.ravel().astype(np.float64)
    da = a - a.mean()
    db = b - b.mean()
    va = float(np.sum(da * da))
    vb = float(np.sum(db * db))
    if va <= 0.0 or vb <= 0.0:
        return None
    return float(np.sum(da * db) / np.sqrt(va * vb))


def _map_stats(arr: np.ndarray) -> MapStats:
    return MapStats(mean=float(arr.mean()), std=float(arr.std()),
                    minimum=float(arr.min()), maximum=float(arr.max()))


def residual_diagnostics(olu: Raster, olrc: Raster, obsum: Raster,
                         reference_fine: Raster, coarse_tp: Raster,
                         objects: ObjectMap, s: int) -> ResidualDiagnostics:
    """Residual taxonomy of a finished run against a known reference.

    Builds the coarse/fine/actual/object residual maps, the stage residual
    maps, and the pairwise correlations of each against the object and
    actual residuals.
    """
    maps_cf = compute_residuals(coarse_tp, olu, s)
    coarse_resid = maps_cf.coarse.data.astype(np.float64)
    valid = maps_cf.coarse.valid_mask()
    coarse_resid = np.where(valid, coarse_resid, 0.0)
    coarse_on_fine = np.repeat(np.repeat(coarse_resid, s, axis=0), s,
                               axis=1)
    fine_resid = maps_cf.fine.data
    actual = reference_fine.data.astype(np.float64) - olu.data
    flat_obj = objects.labels.ravel()
    counts = np.bincount(flat_obj, minlength=objects.object_count)
    object_resid = np.empty_like(actual)
    for b in range(actual.shape[2]):
        means = np.bincount(flat_obj, weights=actual[:, :, b].ravel(),
                            minlength=objects.object_count) / counts
        object_resid[:, :, b] = means[flat_obj].reshape(actual.shape[:2])
    ol_r = olrc.data.astype(np.float64) - olu.data
    total_r = obsum.data.astype(np.float64) - olu.data

    maps = {
        "coarse_residuals": coarse_on_fine,
        "fine_residuals": fine_resid,
        "actual_residuals": actual,
        "object_residuals": object_resid,
        "abs_or_minus_fr": np.abs(object_resid - fine_resid),
        "ol_r": ol_r,
        "ol_r_plus_pl_r": total_r,
    }
    stats = {name: _map_stats(arr) for name, arr in maps.items()}
    candidates = ("coarse_residuals", "fine_residuals", "ol_r",
                  "ol_r_plus_pl_r")
    correlations = {
        ref: {c: _pearson(maps[ref], maps[c]) for c in candidates}
        for ref in ("object_residuals", "actual_residuals")
    }
    return ResidualDiagnostics(maps=maps, stats=stats,
                               correlations=correlations)
