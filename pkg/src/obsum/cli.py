"""Command-line surface: fuse, simulate, evaluate, synth, quicklook.

Exit codes: 0 success, 1 input/usage error, 2 computation failure.
Outputs are staged in a temporary directory and renamed into place only
when the whole command succeeds, so a nonzero exit leaves no partial
files behind.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from obsum.bvls import SolverError
from obsum.metrics import MetricsError, evaluate
from obsum.pipeline import (FusionConfig, PipelineError, SceneSpec,
                            StageError, fuse, generate_synthetic_scene,
                            load_config, simulate_coarse, stepwise_report)
from obsum.preprocess import PreprocessError
from obsum.raster import (Raster, RasterError, read_raster, write_raster)
from obsum.residual import ResidualError
from obsum.unmix import UnmixError

class UsageError(Exception):
    """Bad flags or unusable inputs; maps to exit code 1."""


INPUT_ERRORS = (UsageError, RasterError, PipelineError, PreprocessError,
                UnmixError, ResidualError, MetricsError, OSError)


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exit code 1, not 2."""

    def error(self, message):
        raise UsageError(message)


class AtomicOutputs:
    """Write files under temporary names; publish them all at once."""

    def __init__(self):
        self._tempdirs: dict[Path, Path] = {}
        self._moves: list[tuple[Path, Path]] = []

    def _tempdir(self, parent: Path) -> Path:
        parent = parent.resolve()
        if parent not in self._tempdirs:
            tmp = parent / f".obsum-staging-{os.getpid()}"
            tmp.mkdir(parents=True, exist_ok=True)
            self._tempdirs[parent] = tmp
        return self._tempdirs[parent]

    def stage(self, final, payload_sibling=False) -> Path:
        """Temp path that will be renamed to `final` on commit.

        payload_sibling also schedules the BRF payload file next to it.
        """
        final = Path(final)
        tmp = self._tempdir(final.parent) / final.name
        self._moves.append((tmp, final))
        if payload_sibling:
            self._moves.append((Path(str(tmp) + ".bin"),
                                Path(str(final) + ".bin")))
        return tmp

    def stage_raster(self, raster: Raster, final) -> Path:
        tmp = self.stage(final, payload_sibling=True)
        write_raster(raster, tmp)
        return tmp

    def commit(self) -> list[Path]:
        written = []
        for tmp, final in self._moves:
            if tmp.exists():
                os.replace(tmp, final)
                written.append(final)
        self.abort()
        return written

    def abort(self):
        for tmp in self._tempdirs.values():
            shutil.rmtree(tmp, ignore_errors=True)
        self._tempdirs.clear()
        self._moves.clear()


def _env_threads() -> int | None:
    raw = os.environ.get("OBSUM_THREADS")
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"OBSUM_THREADS is not an integer: {raw!r}")


def _add_tuning_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config document")
    p.add_argument("--scale", type=int,
                   help="coarse/fine pixel size ratio (inferred from the "
                        "input dimensions when omitted)")
    p.add_argument("--classes", type=int, help="number of land-cover "
                   "classes for the unsupervised classification")
    p.add_argument("--window", type=int, help="unmixing window size "
                   "(odd, in coarse pixels)")
    p.add_argument("--sim-window", type=int, help="similar-pixel window "
                   "size (odd, in fine pixels)")
    p.add_argument("--n-similar", type=int, help="number of similar "
                   "pixels combined per target pixel")
    p.add_argument("--or-percent", type=float, help="percentage of "
                   "highest-index residual cells selected per object")
    p.add_argument("--seed", type=int, help="classification seed")
    p.add_argument("--segmentation", help="external segmentation raster "
                   "(BRF) instead of the built-in segmenter")
    p.add_argument("--threads", type=int,
                   help="worker threads for the windowed kernels "
                        "(default: all cores, or OBSUM_THREADS)")


def _build_config(args, fine: Raster | None = None,
                  coarse: Raster | None = None) -> FusionConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        scale = args.scale
        if scale is None and fine is not None and coarse is not None:
            hc = coarse.descriptor.height
            if hc == 0 or fine.descriptor.height % hc:
                raise UsageError("cannot infer --scale from the input "
                                 "dimensions")
            scale = fine.descriptor.height // hc
        if scale is None:
            raise UsageError("--scale (or --config) is required")
        cfg = FusionConfig(scale=scale)
    overrides = {
        "scale": args.scale,
        "n_classes": args.classes,
        "unmix_window": args.window,
        "similar_window": getattr(args, "sim_window", None),
        "n_similar": getattr(args, "n_similar", None),
        "or_percent": getattr(args, "or_percent", None),
        "kmeans_seed": args.seed,
        "segmentation_path": getattr(args, "segmentation", None),
        "threads": args.threads if args.threads is not None
        else _env_threads(),
    }
    for name, value in overrides.items():
        if value is not None:
            setattr(cfg, name, value)
    cfg.validate()
    return cfg


# ----------------------------------------------------------------- commands

def cmd_fuse(args) -> int:
    fine = read_raster(args.fine)
    coarse = read_raster(args.coarse)
    cfg = _build_config(args, fine, coarse)
    cfg.emit_intermediates = bool(args.emit_intermediates)
    result = fuse(fine, coarse, cfg)
    out = Path(args.out)
    stage = AtomicOutputs()
    try:
        stage.stage_raster(result.prediction, out)
        if cfg.emit_intermediates:
            stem = out.with_suffix("")
            stage.stage_raster(result.olu, Path(f"{stem}_olu.brf"))
            stage.stage_raster(result.olrc, Path(f"{stem}_olrc.brf"))
            stage.stage_raster(result.objectmap.to_raster(),
                               Path(f"{stem}_objects.brf"))
        written = stage.commit()
    except BaseException:
        stage.abort()
        raise
    print("stage timings:")
    for stage_name, seconds in result.timings.items():
        print(f"  {stage_name:<16}{seconds:8.2f} s")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_simulate(args) -> int:
    fine = read_raster(args.fine)
    mask = read_raster(args.mask) if args.mask else None
    coarse = simulate_coarse(fine, args.scale, mask)
    stage = AtomicOutputs()
    try:
        stage.stage_raster(coarse, args.out)
        written = stage.commit()
    except BaseException:
        stage.abort()
        raise
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_evaluate(args) -> int:
    pred = read_raster(args.pred)
    ref = read_raster(args.ref)
    report = evaluate(pred, ref)
    text = report.to_csv() if args.format == "csv" else report.to_table()
    if args.out:
        stage = AtomicOutputs()
        try:
            stage.stage(args.out).write_text(text)
            written = stage.commit()
        except BaseException:
            stage.abort()
            raise
        for path in written:
            print(f"wrote {path}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_synth(args) -> int:
    spec = SceneSpec(height=args.size, width=args.size, scale=args.scale,
                     n_objects=args.objects, n_classes=args.classes,
                     bands=args.bands, change=args.change,
                     change_scale=args.change_scale,
                     smooth_change=args.smooth, noise=args.noise,
                     texture=args.texture,
                     mask_fraction=args.mask_fraction)
    scene = generate_synthetic_scene(spec, args.seed or 0)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = AtomicOutputs()
    try:
        stage.stage_raster(scene.fine_tb, out_dir / "fine_tb.brf")
        stage.stage_raster(scene.fine_tp, out_dir / "fine_tp.brf")
        stage.stage_raster(scene.coarse_tp, out_dir / "coarse_tp.brf")
        stage.stage_raster(scene.classmap.to_raster(),
                           out_dir / "classmap.brf")
        stage.stage_raster(scene.objectmap.to_raster(),
                           out_dir / "objectmap.brf")
        if scene.mask is not None:
            stage.stage_raster(scene.mask, out_dir / "mask.brf")
        written = stage.commit()
    except BaseException:
        stage.abort()
        raise
    for path in written:
        print(f"wrote {path}")
    if args.stepwise:
        cfg = _build_config(args)
        report = stepwise_report(scene, cfg)
        sys.stdout.write(report.to_table())
    return 0


def cmd_diagnose(args) -> int:
    from obsum.preprocess import ObjectMap
    from obsum.residual import residual_diagnostics

    olu = read_raster(args.olu)
    olrc = read_raster(args.olrc)
    obsum_pred = read_raster(args.obsum)
    ref = read_raster(args.ref)
    coarse = read_raster(args.coarse)
    objects = ObjectMap.from_raster(read_raster(args.objects))
    scale = args.scale
    if scale is None:
        hc = coarse.descriptor.height
        if hc == 0 or ref.descriptor.height % hc:
            raise UsageError("cannot infer --scale from the input "
                             "dimensions")
        scale = ref.descriptor.height // hc
    diag = residual_diagnostics(olu, olrc, obsum_pred, ref, coarse,
                                objects, scale)
    text = diag.to_text()
    if args.out:
        stage = AtomicOutputs()
        try:
            stage.stage(args.out).write_text(text)
            written = stage.commit()
        except BaseException:
            stage.abort()
            raise
        for path in written:
            print(f"wrote {path}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_quicklook(args) -> int:
    from PIL import Image

    raster = read_raster(args.raster)
    try:
        bands = [int(b) for b in args.bands.split(",")]
    except ValueError:
        raise UsageError(f"--bands must be a comma list, got {args.bands!r}")
    if len(bands) != 3:
        raise UsageError("--bands needs exactly three 1-based indices")
    nb = raster.descriptor.bands
    for b in bands:
        if not 1 <= b <= nb:
            raise RasterError(
                f"band {b} out of range for a {nb}-band raster")
    valid = raster.pixel_valid_mask()
    if not valid.any():
        raise RasterError("raster is fully masked; nothing to render")
    channels = []
    for b in bands:
        band = raster.data[:, :, b - 1].astype(np.float64)
        vals = band[valid]
        lo, hi = np.percentile(vals, [2.0, 98.0])
        if hi <= lo:
            chan = np.full(band.shape, 128, dtype=np.uint8)
        else:
            stretched = np.clip((band - lo) / (hi - lo), 0.0, 1.0)
            chan = np.rint(stretched * 255).astype(np.uint8)
        chan[~valid] = 0
        channels.append(chan)
    rgb = np.stack(channels, axis=2)
    stage = AtomicOutputs()
    try:
        tmp = stage.stage(args.out)
        Image.fromarray(rgb, mode="RGB").save(tmp, format="PNG")
        written = stage.commit()
    except BaseException:
        stage.abort()
        raise
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="obsum",
                     description="Object-based spatial unmixing for "
                                 "spatiotemporal image fusion")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fuse = sub.add_parser("fuse", help="fuse a base-date fine image "
                            "with a prediction-date coarse image")
    p_fuse.add_argument("--fine", required=True,
                        help="fine image at the base date (BRF)")
    p_fuse.add_argument("--coarse", required=True,
                        help="coarse image at the prediction date (BRF)")
    p_fuse.add_argument("--out", required=True, help="output prediction")
    p_fuse.add_argument("--emit-intermediates", action="store_true",
                        help="also write the unmixing and object-residual "
                             "stages and the object map")
    _add_tuning_flags(p_fuse)
    p_fuse.set_defaults(func=cmd_fuse)

    p_sim = sub.add_parser("simulate", help="degrade a fine image to "
                           "coarse resolution by block averaging")
    p_sim.add_argument("--fine", required=True)
    p_sim.add_argument("--scale", type=int, required=True)
    p_sim.add_argument("--mask", help="coarse-resolution mask raster; "
                       "nonzero cells become nodata")
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_eval = sub.add_parser("evaluate", help="accuracy indices of a "
                            "prediction against a reference")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--ref", required=True)
    p_eval.add_argument("--format", choices=("table", "csv"),
                        default="table")
    p_eval.add_argument("--out", help="write the table here instead of "
                        "stdout")
    p_eval.set_defaults(func=cmd_evaluate)

    p_synth = sub.add_parser("synth", help="generate a synthetic scene "
                             "with known truth")
    p_synth.add_argument("--out-dir", required=True)
    p_synth.add_argument("--size", type=int, default=320,
                         help="fine grid side length")
    p_synth.add_argument("--scale", type=int, default=16)
    p_synth.add_argument("--objects", type=int, default=24)
    p_synth.add_argument("--classes", type=int, default=5)
    p_synth.add_argument("--bands", type=int, default=4)
    p_synth.add_argument("--change",
                         choices=("none", "class", "object"),
                         default="object")
    p_synth.add_argument("--change-scale", type=float, default=0.12)
    p_synth.add_argument("--smooth", type=float, default=0.04,
                         help="within-object smooth change amplitude")
    p_synth.add_argument("--noise", type=float, default=0.01)
    p_synth.add_argument("--texture", type=float, default=0.004,
                         help="base-date intra-class texture")
    p_synth.add_argument("--mask-fraction", type=float, default=0.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--stepwise", action="store_true",
                         help="run all fusion stages on the scene and "
                              "print the per-stage metric table")
    p_synth.add_argument("--window", type=int, default=None)
    p_synth.add_argument("--sim-window", type=int, default=None)
    p_synth.add_argument("--n-similar", type=int, default=None)
    p_synth.add_argument("--or-percent", type=float, default=None)
    p_synth.add_argument("--config", default=None)
    p_synth.add_argument("--threads", type=int, default=None)
    p_synth.set_defaults(func=cmd_synth)

    p_diag = sub.add_parser("diagnose", help="residual taxonomy and "
                            "correlation table of a finished run against "
                            "a reference image")
    p_diag.add_argument("--olu", required=True,
                        help="unmixing-stage prediction (from fuse "
                             "--emit-intermediates)")
    p_diag.add_argument("--olrc", required=True,
                        help="object-residual-stage prediction")
    p_diag.add_argument("--obsum", required=True,
                        help="final prediction")
    p_diag.add_argument("--ref", required=True,
                        help="reference fine image at the prediction date")
    p_diag.add_argument("--coarse", required=True,
                        help="coarse image at the prediction date")
    p_diag.add_argument("--objects", required=True,
                        help="object map raster")
    p_diag.add_argument("--scale", type=int, default=None)
    p_diag.add_argument("--out", help="write the report here instead of "
                        "stdout")
    p_diag.set_defaults(func=cmd_diagnose)

    p_look = sub.add_parser("quicklook", help="8-bit PNG composite with "
                            "a 2%% linear stretch")
    p_look.add_argument("--raster", required=True)
    p_look.add_argument("--bands", default="4,3,2",
                        help="three 1-based band indices, e.g. 4,3,2 for "
                             "a NIR-red-green composite")
    p_look.add_argument("--out", required=True)
    p_look.set_defaults(func=cmd_quicklook)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (StageError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
