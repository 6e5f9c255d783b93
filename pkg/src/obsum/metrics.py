"""Accuracy indices for fusion evaluation: AD, RMSE, r, SSIM.

All indices are computed per band with pairwise nodata exclusion and
aggregated as band means.  Correlation on a constant input is reported as
an explicit undefined marker, never silently coerced to a number.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from obsum.raster import Raster

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class MetricsError(ValueError):
    """Incompatible rasters or no valid pixels to compare."""


def _paired(pred: Raster, ref: Raster):
    if pred.shape != ref.shape:
        raise MetricsError(
            f"prediction {pred.shape} and reference {ref.shape} "
            "dimensions differ")
    valid = pred.valid_mask() & ref.valid_mask()
    if not valid.any():
        raise MetricsError("no valid pixels to compare")
    return (pred.data.astype(np.float64), ref.data.astype(np.float64),
            valid)


def avg_difference(pred: Raster, ref: Raster) -> np.ndarray:
    """Per-band mean of (prediction - reference); positive means
    overestimation."""
    p, r, valid = _paired(pred, ref)
    bands = p.shape[2]
    out = np.empty(bands)
    for b in range(bands):
        v = valid[:, :, b]
        if not v.any():
            raise MetricsError(f"band {b}: no valid pixels")
        out[b] = np.mean(p[:, :, b][v] - r[:, :, b][v])
    return out


def rmse(pred: Raster, ref: Raster) -> np.ndarray:
    """Per-band root mean squared error."""
    p, r, valid = _paired(pred, ref)
    bands = p.shape[2]
    out = np.empty(bands)
    for b in range(bands):
        v = valid[:, :, b]
        if not v.any():
            raise MetricsError(f"band {b}: no valid pixels")
        diff = p[:, :, b][v] - r[:, :, b][v]
        out[b] = np.sqrt(np.mean(diff * diff))
    return out


def corrcoef(pred: Raster, ref: Raster) -> list[float | None]:
    """Per-band Pearson correlation; None where either band is constant."""
    p, r, valid = _paired(pred, ref)
    out: list[float | None] = []
    for b in range(p.shape[2]):
        v = valid[:, :, b]
        if not v.any():
            raise MetricsError(f"band {b}: no valid pixels")
        a = p[:, :, b][v]
        c = r[:, :, b][v]
        da = a - a.mean()
        dc = c - c.mean()
        va = float(np.sum(da * da))
        vc = float(np.sum(dc * dc))
        if va <= 0.0 or vc <= 0.0:
            out.append(None)
        else:
            out.append(float(np.sum(da * dc) / np.sqrt(va * vc)))
    return out


def _gaussian_kernel_1d(size: int = SSIM_WINDOW,
                        sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def _window_means(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gaussian-weighted window means, valid placements only (separable)."""
    rows = np.lib.stride_tricks.sliding_window_view(x, g.size, axis=0)
    rows = rows @ g
    cols = np.lib.stride_tricks.sliding_window_view(rows, g.size, axis=1)
    return cols @ g


def ssim(pred: Raster, ref: Raster) -> np.ndarray:
    """Per-band mean local structural similarity.

    Gaussian 11x11 window (sigma 1.5), stabilizers K1=0.01 / K2=0.03 at
    dynamic range 1; only windows fully inside the image (and, when nodata
    is present, fully valid in both inputs) contribute to the mean.
    """
    p, r, valid = _paired(pred, ref)
    h, w, bands = p.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise MetricsError(
            f"image {h}x{w} is smaller than the {SSIM_WINDOW}x"
            f"{SSIM_WINDOW} window")
    g = _gaussian_kernel_1d()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    out = np.empty(bands)
    for b in range(bands):
        x = p[:, :, b]
        y = r[:, :, b]
        mu_x = _window_means(x, g)
        mu_y = _window_means(y, g)
        var_x = _window_means(x * x, g) - mu_x * mu_x
        var_y = _window_means(y * y, g) - mu_y * mu_y
        cov = _window_means(x * y, g) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        smap = num / den
        v = valid[:, :, b]
        if v.all():
            out[b] = smap.mean()
        else:
            ok = np.lib.stride_tricks.sliding_window_view(
                v, (SSIM_WINDOW, SSIM_WINDOW)).all(axis=(2, 3))
            if not ok.any():
                raise MetricsError(f"band {b}: no fully valid window")
            out[b] = smap[ok].mean()
    return out


@dataclass
class BandMetrics:
    band: int
    ad: float
    rmse: float
    r: float | None
    ssim: float


@dataclass
class MetricReport:
    """Per-band indices plus across-band means."""

    bands: list[BandMetrics]
    mean_ad: float
    mean_rmse: float
    mean_r: float | None
    mean_ssim: float

    @staticmethod
    def _fmt(v: float | None) -> str:
        return "undefined" if v is None else f"{v:.5f}"

    def to_table(self) -> str:
        lines = [f"{'band':>6}{'AD':>12}{'RMSE':>12}{'r':>12}{'SSIM':>12}"]
        for bm in self.bands:
            lines.append(f"{bm.band:>6}{bm.ad:>12.5f}{bm.rmse:>12.5f}"
                         f"{self._fmt(bm.r):>12}{bm.ssim:>12.5f}")
        lines.append(f"{'mean':>6}{self.mean_ad:>12.5f}"
                     f"{self.mean_rmse:>12.5f}{self._fmt(self.mean_r):>12}"
                     f"{self.mean_ssim:>12.5f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("band,ad,rmse,r,ssim\n")
        for bm in self.bands:
            buf.write(f"{bm.band},{bm.ad!r},{bm.rmse!r},"
                      f"{self._fmt(bm.r) if bm.r is None else repr(bm.r)},"
                      f"{bm.ssim!r}\n")
        buf.write(f"mean,{self.mean_ad!r},{self.mean_rmse!r},"
                  f"{self._fmt(self.mean_r) if self.mean_r is None else repr(self.mean_r)},"
                  f"{self.mean_ssim!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricReport":
        lines = [ln for ln in text.strip().splitlines() if ln]
        rows = []
        mean_row = None
        for line in lines[1:]:
            band, ad, rm, r, ss = line.split(",")
            r_val = None if r == "undefined" else float(r)
            if band == "mean":
                mean_row = (float(ad), float(rm), r_val, float(ss))
            else:
                rows.append(BandMetrics(int(band), float(ad), float(rm),
                                        r_val, float(ss)))
        if mean_row is None:
            raise MetricsError("metric table has no mean row")
        return cls(rows, *mean_row)


def evaluate(pred: Raster, ref: Raster) -> MetricReport:
    """All four indices per band plus band means.

    The mean correlation is undefined whenever any band's correlation is.
    """
    ad = avg_difference(pred, ref)
    rm = rmse(pred, ref)
    rs = corrcoef(pred, ref)
    ss = ssim(pred, ref)
    bands = [BandMetrics(b + 1, float(ad[b]), float(rm[b]), rs[b],
                         float(ss[b]))
             for b in range(len(ad))]
    mean_r = None if any(r is None for r in rs) \
        else float(np.mean([r for r in rs]))
    return MetricReport(bands=bands, mean_ad=float(ad.mean()),
                        mean_rmse=float(rm.mean()), mean_r=mean_r,
                        mean_ssim=float(ss.mean()))


@dataclass
class SeriesReport:
    """Accuracy over a time series of prediction dates.

    The series mean covers RMSE, r, and SSIM only: signed average
    differences at different dates can cancel, so a series-mean AD is
    not reported.
    """

    rows: list[tuple[str, MetricReport]]

    def mean_rmse(self) -> float:
        return float(np.mean([r.mean_rmse for _, r in self.rows]))

    def mean_r(self) -> float | None:
        values = [r.mean_r for _, r in self.rows]
        if any(v is None for v in values):
            return None
        return float(np.mean(values))

    def mean_ssim(self) -> float:
        return float(np.mean([r.mean_ssim for _, r in self.rows]))

    def to_table(self) -> str:
        fmt = MetricReport._fmt
        lines = [f"{'date':<16}{'AD':>12}{'RMSE':>12}{'r':>12}"
                 f"{'SSIM':>12}"]
        for label, report in self.rows:
            lines.append(f"{label:<16}{report.mean_ad:>12.5f}"
                         f"{report.mean_rmse:>12.5f}"
                         f"{fmt(report.mean_r):>12}"
                         f"{report.mean_ssim:>12.5f}")
        lines.append(f"{'mean':<16}{'-':>12}{self.mean_rmse():>12.5f}"
                     f"{fmt(self.mean_r()):>12}{self.mean_ssim():>12.5f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("date,metric,value\n")
        for label, report in self.rows:
            buf.write(f"{label},ad,{report.mean_ad!r}\n")
            buf.write(f"{label},rmse,{report.mean_rmse!r}\n")
            r = "undefined" if report.mean_r is None \
                else repr(report.mean_r)
            buf.write(f"{label},r,{r}\n")
            buf.write(f"{label},ssim,{report.mean_ssim!r}\n")
        buf.write(f"mean,rmse,{self.mean_rmse()!r}\n")
        mr = "undefined" if self.mean_r() is None else repr(self.mean_r())
        buf.write(f"mean,r,{mr}\n")
        buf.write(f"mean,ssim,{self.mean_ssim()!r}\n")
        return buf.getvalue()


def evaluate_series(pairs) -> SeriesReport:
    """Evaluate (label, prediction, reference) triples over a series."""
    rows = [(str(label), evaluate(pred, ref))
            for label, pred, ref in pairs]
    if not rows:
        raise MetricsError("series is empty")
    return SeriesReport(rows=rows)
