"""Raster container, portable file I/O, and the two resampling kernels.

A Raster is a dense (height, width, bands) float array plus a descriptor.
Reflectance payloads live in [0, 1]; residual payloads live in [-1, 1].
Files use the BRF format: a text header (key = value lines) next to a raw
binary payload of band-sequential, row-major, little-endian float32.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

PAYLOAD_SUFFIX = ".bin"


class RasterError(ValueError):
    """Invalid raster contents or incompatible raster arguments."""


class RasterIOError(RasterError):
    """Malformed BRF header or payload."""


@dataclass(frozen=True)
class RasterDescriptor:
    width: int
    height: int
    bands: int
    nodata: float | None = None
    geo: tuple[float, float, float, float, float, float] | None = None

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0 or self.bands <= 0:
            raise RasterError(
                f"descriptor dimensions must be positive, got "
                f"{self.width}x{self.height}x{self.bands}")
        if self.nodata is not None:
            nd = float(self.nodata)
            if not np.isfinite(nd):
                raise RasterError("nodata sentinel must be finite")
            if 0.0 <= nd <= 1.0:
                raise RasterError(
                    f"nodata sentinel {nd} must lie outside [0, 1]")
        if self.geo is not None and len(self.geo) != 6:
            raise RasterError("geo transform must have 6 terms")


@dataclass
class Raster:
    descriptor: RasterDescriptor
    data: np.ndarray  # (height, width, bands)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3:
            raise RasterError(f"raster data must be 2-D or 3-D, "
                              f"got ndim={self.data.ndim}")
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        d = self.descriptor
        if self.data.shape != (d.height, d.width, d.bands):
            raise RasterError(
                f"data shape {self.data.shape} does not match descriptor "
                f"{(d.height, d.width, d.bands)}")

    @classmethod
    def from_array(cls, array, nodata: float | None = None,
                   geo: tuple | None = None) -> "Raster":
        array = np.asarray(array)
        if array.ndim == 2:
            array = array[:, :, None]
        h, w, b = array.shape
        desc = RasterDescriptor(width=w, height=h, bands=b, nodata=nodata,
                                geo=tuple(geo) if geo is not None else None)
        desc.validate()
        return cls(desc, array)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def valid_mask(self) -> np.ndarray:
        """Per-cell validity, (height, width, bands) bool."""
        if self.descriptor.nodata is None:
            return np.ones(self.data.shape, dtype=bool)
        return self.data != self.descriptor.nodata

    def pixel_valid_mask(self) -> np.ndarray:
        """Per-pixel validity: True where every band is valid."""
        return self.valid_mask().all(axis=2)

    def with_data(self, data: np.ndarray, nodata: float | None = None,
                  drop_nodata: bool = False) -> "Raster":
        """New raster sharing this one's geometry with replaced payload."""
        desc = self.descriptor
        if drop_nodata:
            desc = replace(desc, nodata=None)
        elif nodata is not None:
            desc = replace(desc, nodata=nodata)
        return Raster(desc, data)


def _payload_path(header_path: Path, payload_key: str | None) -> Path:
    if payload_key:
        return header_path.parent / payload_key
    return Path(str(header_path) + PAYLOAD_SUFFIX)


def write_raster(raster: Raster, path) -> None:
    """Write a raster as a BRF header + float32 binary payload.

    The payload file sits next to the header with a ``.bin`` suffix added.
    """
    path = Path(path)
    desc = raster.descriptor
    desc.validate()
    valid = raster.valid_mask()
    if not np.isfinite(raster.data[valid]).all():
        raise RasterError("raster contains non-finite values; encode gaps "
                          "with a finite nodata sentinel instead")
    payload = _payload_path(path, None)
    lines = [
        f"width = {desc.width}",
        f"height = {desc.height}",
        f"bands = {desc.bands}",
        "dtype = float32",
        f"payload = {payload.name}",
    ]
    if desc.nodata is not None:
        # store the float32 value the payload actually carries
        lines.append(f"nodata = {float(np.float32(desc.nodata))!r}")
    if desc.geo is not None:
        lines.append("geo = " + ", ".join(repr(float(g)) for g in desc.geo))
    path.write_text("\n".join(lines) + "\n")
    # band-sequential: (bands, height, width) row-major
    bsq = np.ascontiguousarray(raster.data.transpose(2, 0, 1),
                               dtype="<f4")
    bsq.tofile(payload)


def read_raster(path) -> Raster:
    """Read a BRF raster; the payload is returned bit-exact as float32."""
    path = Path(path)
    if not path.is_file():
        raise RasterIOError(f"no such raster header: {path}")
    fields: dict[str, str] = {}
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise RasterIOError(f"{path}:{ln}: malformed header line {line!r}")
        key, _, value = line.partition("=")
        fields[key.strip().lower()] = value.strip()

    def _int_field(name: str) -> int:
        if name not in fields:
            raise RasterIOError(f"{path}: missing header key '{name}'")
        try:
            return int(fields[name])
        except ValueError:
            raise RasterIOError(
                f"{path}: header key '{name}' is not an integer: "
                f"{fields[name]!r}") from None

    width = _int_field("width")
    height = _int_field("height")
    bands = _int_field("bands")
    dtype = fields.get("dtype", "float32")
    if dtype != "float32":
        raise RasterIOError(f"{path}: unsupported dtype {dtype!r}")
    nodata = None
    if "nodata" in fields:
        try:
            nodata = float(fields["nodata"])
        except ValueError:
            raise RasterIOError(f"{path}: bad nodata value "
                                f"{fields['nodata']!r}") from None
    geo = None
    if "geo" in fields:
        try:
            geo = tuple(float(g) for g in fields["geo"].split(","))
        except ValueError:
            raise RasterIOError(f"{path}: bad geo transform "
                                f"{fields['geo']!r}") from None
    desc = RasterDescriptor(width=width, height=height, bands=bands,
                            nodata=nodata, geo=geo)
    try:
        desc.validate()
    except RasterError as exc:
        raise RasterIOError(f"{path}: {exc}") from None

    payload = _payload_path(path, fields.get("payload"))
    if not payload.is_file():
        raise RasterIOError(f"{path}: payload file {payload} not found")
    raw = np.fromfile(payload, dtype="<f4")
    expected = width * height * bands
    if raw.size != expected:
        raise RasterIOError(
            f"{payload}: payload length mismatch: expected {expected} "
            f"values, found {raw.size}")
    data = raw.reshape(bands, height, width).transpose(1, 2, 0)
    raster = Raster(desc, data)
    if not np.isfinite(data[raster.valid_mask()]).all():
        raise RasterIOError(
            f"{payload}: non-finite payload values (gaps must be encoded "
            "with a finite nodata sentinel)")
    return raster


def _check_scale(s: int) -> int:
    s = int(s)
    if s < 2:
        raise RasterError(f"scale factor must be >= 2, got {s}")
    return s


def _scaled_geo(geo, factor: float):
    if geo is None:
        return None
    x0, px, rx, y0, ry, py = geo
    return (x0, px * factor, rx * factor, y0, ry * factor, py * factor)


def block_mean_upscale(fine: Raster, s: int) -> Raster:
    """Degrade a fine raster by averaging non-overlapping s x s blocks.

    Nodata cells are excluded from the mean; a block with no valid cell
    becomes nodata.
    """
    s = _check_scale(s)
    h, w, b = fine.shape
    if h % s or w % s:
        raise RasterError(
            f"fine dimensions {h}x{w} not divisible by scale factor {s}")
    hc, wc = h // s, w // s
    data = fine.data.astype(np.float64)
    desc = fine.descriptor
    out_desc = RasterDescriptor(width=wc, height=hc, bands=b,
                                nodata=desc.nodata,
                                geo=_scaled_geo(desc.geo, s))
    valid = fine.valid_mask()
    blocks = data.reshape(hc, s, wc, s, b)
    if valid.all():
        out = blocks.mean(axis=(1, 3))
        return Raster(out_desc, out)
    vblocks = valid.reshape(hc, s, wc, s, b)
    counts = vblocks.sum(axis=(1, 3))
    sums = np.where(vblocks, blocks, 0.0).sum(axis=(1, 3))
    with np.errstate(invalid="ignore"):
        out = sums / counts
    out[counts == 0] = desc.nodata
    return Raster(out_desc, out)


def _catmull_rom_weights(t: np.ndarray):
    """Catmull-Rom (a = -0.5) weights for samples at offsets -1, 0, 1, 2.

    The last weight is defined as 1 minus the others so the four always
    sum to exactly 1, which keeps constant inputs bit-exact.
    """
    t2 = t * t
    t3 = t2 * t
    w0 = 0.5 * (-t3 + 2.0 * t2 - t)
    w1 = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0)
    w2 = 0.5 * (-3.0 * t3 + 4.0 * t2 + t)
    w3 = 1.0 - w0 - w1 - w2
    return w0, w1, w2, w3


def _axis_support(n_coarse: int, s: int):
    """Sample indices (n_fine, 4) and weights (n_fine, 4) for one axis.

    Fine pixel centers map to coarse coordinates (i + 0.5)/s - 0.5;
    indices outside the grid replicate the border coarse pixel.
    """
    i = np.arange(n_coarse * s, dtype=np.float64)
    x = (i + 0.5) / s - 0.5
    x0 = np.floor(x)
    t = x - x0
    base = x0.astype(np.int64)
    idx = np.stack([base - 1, base, base + 1, base + 2], axis=1)
    np.clip(idx, 0, n_coarse - 1, out=idx)
    w = np.stack(_catmull_rom_weights(t), axis=1)
    return idx, w


def bicubic_downscale(coarse: Raster, s: int) -> Raster:
    """Interpolate a coarse raster to fine resolution (s x upsampling).

    Catmull-Rom cubic convolution with edge clamping at the borders.
    Cells whose 4x4 support contains nodata fall back to the plain mean of
    the valid support values; fully invalid support stays nodata.  Output
    is clamped to [-1, 1] (the residual payload range).
    """
    s = _check_scale(s)
    hc, wc, b = coarse.shape
    desc = coarse.descriptor
    out_desc = RasterDescriptor(width=wc * s, height=hc * s, bands=b,
                                nodata=desc.nodata,
                                geo=_scaled_geo(desc.geo, 1.0 / s))
    data = coarse.data.astype(np.float64)
    iy, wy = _axis_support(hc, s)
    ix, wx = _axis_support(wc, s)
    valid = coarse.valid_mask()
    if valid.all():
        # separable two-pass; differences from the offset-0 sample keep
        # constant inputs exact
        rows = data[:, ix[:, 1], :].copy()
        for j in (0, 2, 3):
            rows += wx[None, :, j, None] * (data[:, ix[:, j], :]
                                            - data[:, ix[:, 1], :])
        out = rows[iy[:, 1], :, :].copy()
        for j in (0, 2, 3):
            out += wy[:, None, j, None] * (rows[iy[:, j], :, :]
                                           - rows[iy[:, 1], :, :])
    else:
        base = data[iy[:, 1], :, :][:, ix[:, 1], :]
        acc = np.zeros((hc * s, wc * s, b))
        vsum = np.zeros((hc * s, wc * s, b))
        vcount = np.zeros((hc * s, wc * s, b))
        all_valid = np.ones((hc * s, wc * s, b), dtype=bool)
        for jy in range(4):
            ry = data[iy[:, jy], :, :]
            vy = valid[iy[:, jy], :, :]
            for jx in range(4):
                v = ry[:, ix[:, jx], :]
                vm = vy[:, ix[:, jx], :]
                wgt = wy[:, None, jy, None] * wx[None, :, jx, None]
                acc += wgt * (v - base)
                vsum += np.where(vm, v, 0.0)
                vcount += vm
                all_valid &= vm
        cr = base + acc
        with np.errstate(invalid="ignore"):
            mean = vsum / vcount
        out = np.where(all_valid, cr, mean)
        dead = vcount == 0
        np.clip(out, -1.0, 1.0, out=out)
        out[dead] = desc.nodata  # keep the sentinel outside the clamp
        return Raster(out_desc, out)
    np.clip(out, -1.0, 1.0, out=out)
    return Raster(out_desc, out)
