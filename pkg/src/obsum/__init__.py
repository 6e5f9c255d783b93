"""OBSUM: object-based spatial unmixing for spatiotemporal image fusion.

Fuses one fine-resolution image at a base date with one coarse-resolution
image at a prediction date to synthesize the fine image at the prediction
date.  The pipeline runs object-level unmixing, object-level residual
compensation, and pixel-level residual compensation on top of an
unsupervised classification and a segmentation of the base image.
"""

from obsum._kernels import backend_name
from obsum.metrics import (MetricReport, SeriesReport, evaluate,
                           evaluate_series)
from obsum.pipeline import (FusionConfig, FusionResult, SceneSpec,
                            SyntheticScene, fuse, generate_synthetic_scene,
                            load_config, save_config, simulate_coarse,
                            stepwise_report)
from obsum.preprocess import (ClassMap, ObjectMap, ingest_segmentation,
                              kmeans_classify, refine_classmap,
                              segment_builtin)
from obsum.raster import (Raster, RasterDescriptor, RasterError,
                          RasterIOError, bicubic_downscale,
                          block_mean_upscale, read_raster, write_raster)
from obsum.residual import (residual_diagnostics, select_similar_pixels)
from obsum.unmix import class_fractions, olu_predict, unmix_window

__version__ = "0.1.0"

__all__ = [
    "Raster",
    "RasterDescriptor",
    "RasterError",
    "RasterIOError",
    "read_raster",
    "write_raster",
    "block_mean_upscale",
    "bicubic_downscale",
    "ClassMap",
    "ObjectMap",
    "kmeans_classify",
    "segment_builtin",
    "ingest_segmentation",
    "refine_classmap",
    "class_fractions",
    "unmix_window",
    "olu_predict",
    "select_similar_pixels",
    "residual_diagnostics",
    "MetricReport",
    "SeriesReport",
    "evaluate",
    "evaluate_series",
    "FusionConfig",
    "FusionResult",
    "SceneSpec",
    "SyntheticScene",
    "fuse",
    "simulate_coarse",
    "generate_synthetic_scene",
    "stepwise_report",
    "load_config",
    "save_config",
    "backend_name",
    "__version__",
]
