"""End-to-end fusion pipeline, coarse-image simulation, synthetic scenes.

The full run chains preprocessing (classify, segment, refine), object-level
unmixing, object-level residual compensation, and pixel-level residual
compensation.  A deterministic synthetic-scene generator and a step-wise
metric report support desk-scale evaluation without satellite data.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from obsum.metrics import MetricReport, evaluate
from obsum.preprocess import (ClassMap, ObjectMap, ingest_segmentation,
                              kmeans_classify, refine_classmap,
                              segment_builtin)
from obsum.raster import Raster, RasterDescriptor, read_raster
from obsum.raster import block_mean_upscale
from obsum.residual import (build_ori_maps, compute_residuals,
                            olrc_compensate, plrc_compensate,
                            warn_fully_masked_objects)
from obsum.unmix import olu_predict

MASK_NODATA = -9999.0


class PipelineError(ValueError):
    """Invalid pipeline inputs or configuration."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage


@dataclass
class FusionConfig:
    """All pipeline tunables.

    Defaults follow the published parameterization: 5 classes, unmixing
    window 11, similar-pixel window 31 with 30 neighbors, 15% residual
    selection.
    """

    scale: int
    n_classes: int = 5
    unmix_window: int = 11
    similar_window: int = 31
    n_similar: int = 30
    or_percent: float = 15.0
    kmeans_seed: int = 42
    kmeans_max_iter: int = 100
    segment_scale: float = 100.0 / 255.0
    segment_min_size: int | None = None  # defaults to scale**2
    segmentation_path: str | None = None
    emit_intermediates: bool = False
    threads: int | None = None

    def validate(self) -> None:
        if self.scale < 2:
            raise PipelineError(f"scale must be >= 2, got {self.scale}")
        if self.unmix_window % 2 == 0 or self.unmix_window < 1:
            raise PipelineError("unmixing window must be odd")
        if self.similar_window % 2 == 0 or self.similar_window < 1:
            raise PipelineError("similar-pixel window must be odd")
        if self.n_similar < 1:
            raise PipelineError("n_similar must be >= 1")
        if not 0.0 < self.or_percent <= 100.0:
            raise PipelineError("or_percent must be in (0, 100]")
        if self.n_classes < 2:
            raise PipelineError("need at least 2 classes")

    @property
    def min_object_size(self) -> int:
        if self.segment_min_size is not None:
            return self.segment_min_size
        return self.scale * self.scale


_CONFIG_KEYS = {
    "scale": ("scale", int),
    "classes": ("n_classes", int),
    "window": ("unmix_window", int),
    "sim_window": ("similar_window", int),
    "n_similar": ("n_similar", int),
    "or_percent": ("or_percent", float),
    "seed": ("kmeans_seed", int),
    "kmeans_max_iter": ("kmeans_max_iter", int),
    "segment_scale": ("segment_scale", float),
    "segment_min_size": ("segment_min_size", int),
    "segmentation": ("segmentation_path", str),
    "emit_intermediates": ("emit_intermediates", None),
    "threads": ("threads", int),
}


def load_config(path) -> FusionConfig:
    """Parse a key = value config document into a FusionConfig."""
    fields: dict = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise PipelineError(
                    f"{path}:{ln}: malformed config line {line!r}")
            key, _, value = line.partition("=")
            key = key.strip().lower().replace("-", "_")
            value = value.strip()
            if key not in _CONFIG_KEYS:
                raise PipelineError(f"{path}:{ln}: unknown key {key!r}")
            name, conv = _CONFIG_KEYS[key]
            if conv is None:  # boolean
                fields[name] = value.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    fields[name] = conv(value)
                except ValueError:
                    raise PipelineError(
                        f"{path}:{ln}: bad value for {key}: {value!r}"
                    ) from None
    if "scale" not in fields:
        raise PipelineError(f"{path}: config must set 'scale'")
    cfg = FusionConfig(**fields)
    cfg.validate()
    return cfg


def save_config(cfg: FusionConfig, path) -> None:
    reverse = {name: key for key, (name, _) in _CONFIG_KEYS.items()}
    lines = []
    for name, key in reverse.items():
        value = getattr(cfg, name)
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class FusionResult:
    prediction: Raster
    classmap: ClassMap | None = None
    objectmap: ObjectMap | None = None
    olu: Raster | None = None
    olrc: Raster | None = None
    timings: dict[str, float] = field(default_factory=dict)


def _check_fuse_inputs(fine_tb: Raster, coarse_tp: Raster,
                       cfg: FusionConfig) -> None:
    cfg.validate()
    s = cfg.scale
    h, w, bands_f = fine_tb.shape
    hc, wc, bands_c = coarse_tp.shape
    if (h, w) != (hc * s, wc * s):
        raise PipelineError(
            f"fine image {h}x{w} is not {s}x the coarse image {hc}x{wc}")
    if not fine_tb.valid_mask().all():
        raise PipelineError("base fine image must be nodata-free")
    if fine_tb.data.min() < 0.0 or fine_tb.data.max() > 1.0:
        raise PipelineError("base fine image reflectance outside [0, 1]")
    if not coarse_tp.pixel_valid_mask().any():
        raise PipelineError("coarse image is fully masked; nothing to fuse")


def fuse(fine_tb: Raster, coarse_tp: Raster, cfg: FusionConfig,
         classmap: ClassMap | None = None,
         objectmap: ObjectMap | None = None) -> FusionResult:
    """Run the full fusion chain and return the prediction.

    A precomputed class map and/or object map (for example an externally
    produced segmentation) short-circuits the corresponding preprocessing
    stage.  Deterministic for a fixed config, regardless of thread count.
    """
    _check_fuse_inputs(fine_tb, coarse_tp, cfg)
    timings: dict[str, float] = {}

    def run(stage, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            result = fn(*args, **kwargs)
        except Exception as exc:
            raise StageError(stage, str(exc)) from exc
        timings[stage] = time.perf_counter() - start
        return result

    if objectmap is None and cfg.segmentation_path:
        # bad external masks are input errors, not stage failures
        objectmap = ingest_segmentation(read_raster(cfg.segmentation_path),
                                        fine_tb)
    if classmap is None:
        classmap = run("classify", kmeans_classify, fine_tb, cfg.n_classes,
                       cfg.kmeans_seed, cfg.kmeans_max_iter)
    if objectmap is None:
        objectmap = run("segment", segment_builtin, fine_tb,
                        cfg.segment_scale, cfg.min_object_size)
    refined = run("refine", refine_classmap, classmap, objectmap)

    olu = run("unmix", olu_predict, coarse_tp, refined, objectmap,
              cfg.scale, cfg.unmix_window)

    def olrc_stage():
        maps = compute_residuals(coarse_tp, olu, cfg.scale)
        ori = build_ori_maps(objectmap, cfg.scale, cfg.threads).ori
        if coarse_tp.descriptor.nodata is not None:
            warn_fully_masked_objects(objectmap, coarse_tp, cfg.scale)
        return olrc_compensate(olu, maps, ori, objectmap, cfg.or_percent)

    olrc = run("object_residual", olrc_stage)
    obsum = run("pixel_residual", plrc_compensate, olrc, coarse_tp,
                fine_tb, cfg.scale, cfg.similar_window, cfg.n_similar,
                cfg.threads)

    result = FusionResult(prediction=obsum, timings=timings)
    if cfg.emit_intermediates:
        result.classmap = classmap
        result.objectmap = objectmap
        result.olu = olu
        result.olrc = olrc
    return result


def simulate_coarse(fine: Raster, s: int,
                    mask: Raster | None = None) -> Raster:
    """Degrade a fine image to coarse resolution by block averaging.

    An optional single-band mask raster at coarse resolution marks pixels
    (nonzero values) to blank out with the nodata sentinel, emulating
    cloud-contaminated coarse observations.
    """
    coarse = block_mean_upscale(fine, s)
    if mask is None:
        return coarse
    if mask.shape[:2] != coarse.shape[:2]:
        raise PipelineError(
            f"mask {mask.shape[:2]} does not match the coarse grid "
            f"{coarse.shape[:2]}")
    masked = mask.data[:, :, 0] != 0.0
    data = coarse.data.copy()
    data[masked, :] = MASK_NODATA
    return coarse.with_data(data, nodata=MASK_NODATA)


# ------------------------------------------------------------------- scenes

@dataclass
class SceneSpec:
    """Parameters of a generated test scene.

    change selects the temporal-change model between the base and the
    prediction date: "none" keeps spectra identical, "class" shifts each
    land-cover class uniformly (recoverable by unmixing alone), "object"
    shifts every object independently (requires residual compensation).
    smooth_change adds a low-frequency within-object field that only the
    pixel-level stage can recover; noise adds white noise to the truth.
    """

    height: int = 320
    width: int = 320
    scale: int = 16
    n_objects: int = 24
    n_classes: int = 5
    bands: int = 4
    change: str = "object"
    change_scale: float = 0.12
    smooth_change: float = 0.0
    noise: float = 0.0
    texture: float = 0.0
    mask_fraction: float = 0.0
    min_object_side: int | None = None  # defaults to 2 * scale

    def validate(self) -> None:
        if self.height % self.scale or self.width % self.scale:
            raise PipelineError("scene dimensions must be divisible by "
                                "the scale factor")
        if self.change not in ("none", "class", "object"):
            raise PipelineError(f"unknown change model {self.change!r}")
        if self.n_classes < 2:
            raise PipelineError("need at least 2 classes")


@dataclass
class SyntheticScene:
    fine_tb: Raster
    fine_tp: Raster
    coarse_tp: Raster
    classmap: ClassMap
    objectmap: ObjectMap
    mask: Raster | None = None


def _partition_rectangles(h: int, w: int, n: int,
                          rng: np.random.Generator, min_side: int):
    """Split the grid into n axis-aligned rectangles (guillotine cuts)."""
    rects = [(0, h, 0, w)]
    while len(rects) < n:
        splittable = [i for i, (y0, y1, x0, x1) in enumerate(rects)
                      if (y1 - y0) >= 2 * min_side
                      or (x1 - x0) >= 2 * min_side]
        if not splittable:
            raise PipelineError(
                f"cannot place {n} objects of side >= {min_side} on a "
                f"{h}x{w} grid")
        pick = max(splittable,
                   key=lambda i: ((rects[i][1] - rects[i][0])
                                  * (rects[i][3] - rects[i][2]), -i))
        y0, y1, x0, x1 = rects.pop(pick)
        vertical_ok = (x1 - x0) >= 2 * min_side
        horizontal_ok = (y1 - y0) >= 2 * min_side
        if vertical_ok and (not horizontal_ok or rng.random() < 0.5):
            cut = int(rng.integers(x0 + min_side, x1 - min_side + 1))
            rects.append((y0, y1, x0, cut))
            rects.append((y0, y1, cut, x1))
        else:
            cut = int(rng.integers(y0 + min_side, y1 - min_side + 1))
            rects.append((y0, cut, x0, x1))
            rects.append((cut, y1, x0, x1))
    return rects


def _smooth_field(h: int, w: int, bands: int, amplitude: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Low-frequency sinusoidal field, one realization per band."""
    yy = np.arange(h)[:, None] / h
    xx = np.arange(w)[None, :] / w
    out = np.zeros((h, w, bands))
    for b in range(bands):
        for _ in range(3):
            fy = rng.integers(1, 4)
            fx = rng.integers(1, 4)
            phase = rng.uniform(0, 2 * np.pi)
            out[:, :, b] += np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
        out[:, :, b] *= amplitude / 3.0
    return out


def generate_synthetic_scene(spec: SceneSpec, seed: int) -> SyntheticScene:
    """Deterministic scene with known truth; the coarse image is the exact
    block mean of the truth (optionally with masked cells)."""
    spec.validate()
    rng = np.random.default_rng(seed)
    h, w, s = spec.height, spec.width, spec.scale
    min_side = spec.min_object_side if spec.min_object_side is not None \
        else 2 * s
    rects = _partition_rectangles(h, w, spec.n_objects, rng, min_side)

    objects = np.zeros((h, w), dtype=np.int32)
    classes = np.zeros((h, w), dtype=np.int32)
    for i, (y0, y1, x0, x1) in enumerate(rects):
        objects[y0:y1, x0:x1] = i
        classes[y0:y1, x0:x1] = i % spec.n_classes
    # canonical ids ordered by first row-major occurrence
    _, objects = np.unique(objects, return_inverse=True)
    objects = objects.astype(np.int32).reshape(h, w)
    objectmap = ObjectMap(objects, len(rects))
    classmap = ClassMap(classes, spec.n_classes)

    spectra_tb = rng.uniform(0.2, 0.8, size=(spec.n_classes, spec.bands))
    fine_tb = spectra_tb[classes]
    if spec.texture > 0:
        fine_tb = fine_tb + rng.normal(0, spec.texture, fine_tb.shape)

    if spec.change == "none":
        fine_tp = spectra_tb[classes].copy()
    elif spec.change == "class":
        spectra_tp = spectra_tb + rng.uniform(
            -spec.change_scale, spec.change_scale,
            size=spectra_tb.shape)
        fine_tp = spectra_tp[classes]
    else:  # per-object heterogeneous change
        shifts = rng.uniform(-spec.change_scale, spec.change_scale,
                             size=(len(rects), spec.bands))
        fine_tp = spectra_tb[classes] + shifts[objects]
    if spec.smooth_change > 0:
        fine_tp = fine_tp + _smooth_field(h, w, spec.bands,
                                          spec.smooth_change, rng)
    if spec.noise > 0:
        fine_tp = fine_tp + rng.normal(0, spec.noise, fine_tp.shape)

    fine_tb = Raster.from_array(np.clip(fine_tb, 0.0, 1.0))
    fine_tp = Raster.from_array(np.clip(fine_tp, 0.0, 1.0))

    mask = None
    if spec.mask_fraction > 0:
        hc, wc = h // s, w // s
        masked = rng.random((hc, wc)) < spec.mask_fraction
        mask = Raster.from_array(masked.astype(np.float64))
    coarse_tp = simulate_coarse(fine_tp, s, mask)
    return SyntheticScene(fine_tb=fine_tb, fine_tp=fine_tp,
                          coarse_tp=coarse_tp, classmap=classmap,
                          objectmap=objectmap, mask=mask)


# ----------------------------------------------------------- stage reporting

STAGES = ("OL-U", "OL-RC", "OBSUM")


@dataclass
class StepwiseReport:
    """Per-stage accuracy against the scene truth, with improvement gains.

    Gains are signed improvements over the previous stage: a drop for RMSE
    and absolute AD, a rise for r and SSIM.
    """

    reports: dict[str, MetricReport]

    def gains(self) -> dict[str, dict[str, float | None]]:
        out: dict[str, dict[str, float | None]] = {}
        for prev, cur in zip(STAGES, STAGES[1:]):
            a = self.reports[prev]
            b = self.reports[cur]
            r_gain = None if a.mean_r is None or b.mean_r is None \
                else b.mean_r - a.mean_r
            out[cur] = {
                "ad": abs(a.mean_ad) - abs(b.mean_ad),
                "rmse": a.mean_rmse - b.mean_rmse,
                "r": r_gain,
                "ssim": b.mean_ssim - a.mean_ssim,
            }
        return out

    def to_table(self) -> str:
        gains = self.gains()

        def cell(stage, metric, value):
            if value is None:
                text = "undefined"
            else:
                text = f"{value:.5f}"
            if stage in gains:
                g = gains[stage][metric]
                text += " (undefined)" if g is None else f" ({g:.5f})"
            return text

        lines = [f"{'metric':<8}" + "".join(f"{s:>24}" for s in STAGES)]
        rows = [
            ("AD", "ad", lambda r: r.mean_ad),
            ("RMSE", "rmse", lambda r: r.mean_rmse),
            ("r", "r", lambda r: r.mean_r),
            ("SSIM", "ssim", lambda r: r.mean_ssim),
        ]
        for label, key, getter in rows:
            cells = "".join(
                f"{cell(stage, key, getter(self.reports[stage])):>24}"
                for stage in STAGES)
            lines.append(f"{label:<8}" + cells)
        return "\n".join(lines) + "\n"


def run_stages(scene: SyntheticScene, cfg: FusionConfig,
               use_truth_maps: bool = True):
    """Run the pipeline on a scene and keep every stage's prediction."""
    cfg = replace(cfg, emit_intermediates=True)
    classmap = scene.classmap if use_truth_maps else None
    objectmap = scene.objectmap if use_truth_maps else None
    result = fuse(scene.fine_tb, scene.coarse_tp, cfg,
                  classmap=classmap, objectmap=objectmap)
    return {"OL-U": result.olu, "OL-RC": result.olrc,
            "OBSUM": result.prediction}


def stepwise_report(scene: SyntheticScene, cfg: FusionConfig,
                    use_truth_maps: bool = True) -> StepwiseReport:
    """Evaluate every fusion stage against the scene's ground truth."""
    predictions = run_stages(scene, cfg, use_truth_maps)
    reports = {stage: evaluate(pred, scene.fine_tp)
               for stage, pred in predictions.items()}
    return StepwiseReport(reports=reports)
