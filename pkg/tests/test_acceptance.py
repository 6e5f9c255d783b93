"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one PASS line with the measured values on success; a
failed assertion marks the criterion red.  Run with `pytest -s
tests/test_acceptance.py` to see the lines as they complete.
"""

import math
import time

import numpy as np
import pytest
from oracles import enumerate_box_solution, naive_plr, naive_ssim

from obsum._kernels import backend_name, plr_map
from obsum.bvls import bvls
from obsum.cli import main as cli_main
from obsum.metrics import ssim
from obsum.pipeline import (FusionConfig, SceneSpec, fuse,
                            generate_synthetic_scene, run_stages)
from obsum.preprocess import ObjectMap
from obsum.raster import Raster, block_mean_upscale, read_raster
from obsum.residual import build_ori_maps, compute_dc


def announce(criterion: int, message: str):
    print(f"\nPASS criterion {criterion}: {message}")


def object_mean_error(pred, truth, objectmap):
    obj = objectmap.labels.ravel()
    counts = np.bincount(obj, minlength=objectmap.object_count)
    worst = 0.0
    for b in range(pred.shape[2]):
        mp = np.bincount(obj, weights=pred.data[:, :, b].ravel(),
                         minlength=objectmap.object_count) / counts
        mt = np.bincount(obj, weights=truth.data[:, :, b].ravel(),
                         minlength=objectmap.object_count) / counts
        worst = max(worst, float(np.abs(mp - mt).max()))
    return worst


HETEROGENEOUS_SPEC = SceneSpec(height=320, width=320, scale=16,
                               n_objects=24, n_classes=5, bands=4,
                               change="object", change_scale=0.12,
                               smooth_change=0.04, noise=0.01,
                               texture=0.004)
SCENE_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="module")
def heterogeneous_runs():
    """Five randomized heterogeneous-change scenes with stage predictions."""
    cfg = FusionConfig(scale=16)
    runs = []
    for seed in SCENE_SEEDS:
        scene = generate_synthetic_scene(HETEROGENEOUS_SPEC, seed=seed)
        predictions = run_stages(scene, cfg)
        runs.append((scene, predictions))
    return runs


def test_criterion_1_exact_noiseless_recovery():
    spec = SceneSpec(height=256, width=256, scale=8, n_objects=12,
                     n_classes=4, bands=4, change="class",
                     change_scale=0.1, smooth_change=0.0, noise=0.0,
                     texture=0.0)
    scene = generate_synthetic_scene(spec, seed=7)
    cfg = FusionConfig(scale=8, threads=1, emit_intermediates=True)
    start = time.perf_counter()
    result = fuse(scene.fine_tb, scene.coarse_tp, cfg,
                  classmap=scene.classmap, objectmap=scene.objectmap)
    elapsed = time.perf_counter() - start
    olu_err = float(np.abs(result.olu.data - scene.fine_tp.data).max())
    obsum_err = object_mean_error(result.prediction, scene.fine_tp,
                                  scene.objectmap)
    assert olu_err <= 1e-6, f"unmixing error {olu_err:.3e}"
    assert obsum_err <= 1e-6, f"final object-mean error {obsum_err:.3e}"
    assert elapsed < 5.0, f"runtime {elapsed:.2f}s"
    announce(1, f"exact recovery (unmix err {olu_err:.2e}, final "
                f"object-mean err {obsum_err:.2e}) in {elapsed:.2f}s "
                f"single thread")


def test_criterion_2_stage_ordering(heterogeneous_runs):
    from obsum.metrics import evaluate
    ratios = []
    for seed, (scene, predictions) in zip(SCENE_SEEDS, heterogeneous_runs):
        metrics = {stage: evaluate(pred, scene.fine_tp)
                   for stage, pred in predictions.items()}
        rm = {k: v.mean_rmse for k, v in metrics.items()}
        rr = {k: v.mean_r for k, v in metrics.items()}
        assert rm["OBSUM"] < rm["OL-RC"] < rm["OL-U"], (seed, rm)
        assert rr["OBSUM"] > rr["OL-RC"] > rr["OL-U"], (seed, rr)
        object_gain = rm["OL-U"] - rm["OL-RC"]
        pixel_gain = rm["OL-RC"] - rm["OBSUM"]
        assert object_gain >= 2.0 * pixel_gain, (seed, object_gain,
                                                 pixel_gain)
        ratios.append(object_gain / pixel_gain)
    announce(2, f"RMSE strictly decreasing and r strictly increasing "
                f"across stages in {len(SCENE_SEEDS)} scenes; object-stage "
                f"gain {min(ratios):.1f}-{max(ratios):.1f}x the "
                f"pixel-stage gain")


def test_criterion_3_residual_diagnostics_ordering(heterogeneous_runs):
    from obsum.residual import residual_diagnostics
    for seed, (scene, predictions) in zip(SCENE_SEEDS, heterogeneous_runs):
        diag = residual_diagnostics(
            predictions["OL-U"], predictions["OL-RC"],
            predictions["OBSUM"], scene.fine_tp, scene.coarse_tp,
            scene.objectmap, HETEROGENEOUS_SPEC.scale)
        against_obj = diag.correlations["object_residuals"]
        against_act = diag.correlations["actual_residuals"]
        assert against_obj["ol_r"] > against_obj["fine_residuals"], seed
        assert against_act["ol_r_plus_pl_r"] > against_act["ol_r"], seed
    announce(3, "reconstructed object residuals out-correlate the "
                "interpolated fine residuals, and adding the pixel stage "
                "out-correlates the object stage, in every scene")


def test_criterion_4_oracle_equivalence():
    rng = np.random.default_rng(33)
    fine = rng.random((32, 32, 3))
    resid = rng.uniform(-0.25, 0.25, (32, 32, 3))
    got = plr_map(fine, resid, w_s=11, n_s=12)
    plr_err = float(np.abs(got - naive_plr(fine, resid, 11, 12)).max())
    assert plr_err <= 1e-10, f"PL-RC vs brute force {plr_err:.3e}"

    x = rng.random((32, 32))
    y = np.clip(x + rng.normal(0, 0.05, x.shape), 0, 1)
    ssim_err = abs(ssim(Raster.from_array(x[:, :, None]),
                        Raster.from_array(y[:, :, None]))[0]
                   - naive_ssim(x, y))
    assert ssim_err <= 1e-10, f"SSIM vs brute force {ssim_err:.3e}"

    worst_bvls = 0.0
    for trial in range(200):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(n, n + 6))
        A = rng.random((m, n))
        target = rng.uniform(-0.5, 1.5, size=n)
        b = A @ target + rng.normal(0, 0.05, size=m)
        x_hat = bvls(A, b)
        ref, ref_obj = enumerate_box_solution(A, b)
        worst_bvls = max(worst_bvls, float(np.abs(x_hat - ref).max()))
        assert float(np.sum((A @ x_hat - b) ** 2)) <= ref_obj + 1e-8
    assert worst_bvls <= 1e-8, f"BVLS vs enumeration {worst_bvls:.3e}"
    announce(4, f"PL-RC {plr_err:.1e}, SSIM {ssim_err:.1e}, bounded "
                f"least squares {worst_bvls:.1e} vs brute-force oracles "
                f"(backend: {backend_name()})")


def test_criterion_5_coarse_scale_consistency(heterogeneous_runs):
    ratios = []
    for scene, predictions in heterogeneous_runs:
        s = HETEROGENEOUS_SPEC.scale
        pre = block_mean_upscale(predictions["OL-U"], s)
        post = block_mean_upscale(predictions["OBSUM"], s)
        rmse_pre = float(np.sqrt(np.mean(
            (pre.data - scene.coarse_tp.data) ** 2)))
        rmse_post = float(np.sqrt(np.mean(
            (post.data - scene.coarse_tp.data) ** 2)))
        assert rmse_post <= 0.5 * rmse_pre, (rmse_post, rmse_pre)
        ratios.append(rmse_post / rmse_pre)
    announce(5, f"coarse-scale residual shrinks to "
                f"{min(ratios):.2f}-{max(ratios):.2f} of the "
                f"pre-compensation value (<= 0.5 required)")


def test_criterion_6_index_bounds_exhaustive():
    limit = 1.0 + math.sqrt(2.0)
    rng = np.random.default_rng(2)
    for s in range(2, 31):
        dc = compute_dc(s)
        assert dc.min() >= 1.0 and dc.max() < limit, s
        side = 3 * s
        layouts = [
            rng.integers(0, 7, (side, side)).astype(np.int32),
            np.repeat(np.arange(side, dtype=np.int32) // s,
                      side).reshape(side, side),
            np.zeros((side, side), dtype=np.int32),
        ]
        for labels in layouts:
            om = ObjectMap(labels, int(labels.max()) + 1)
            maps = build_ori_maps(om, s)
            assert maps.ohi.min() >= 0.0 and maps.ohi.max() <= 1.0, s
            assert maps.ori.min() >= 0.0 and maps.ori.max() <= 1.0, s
    announce(6, "DC in [1, 1+sqrt(2)), OHI and ORI in [0, 1] for every "
                "scale factor 2..30")


def test_criterion_7_thread_count_determinism(tmp_path):
    from obsum.raster import write_raster
    spec = SceneSpec(height=96, width=96, scale=8, n_objects=8,
                     n_classes=4, bands=3, change="object",
                     change_scale=0.08, noise=0.005, texture=0.004)
    scene = generate_synthetic_scene(spec, seed=13)
    write_raster(scene.fine_tb, tmp_path / "fine.brf")
    write_raster(scene.coarse_tp, tmp_path / "coarse.brf")
    outputs = []
    for threads in ("1", "4"):
        out = tmp_path / f"pred_t{threads}.brf"
        code = cli_main(["fuse", "--fine", str(tmp_path / "fine.brf"),
                         "--coarse", str(tmp_path / "coarse.brf"),
                         "--out", str(out), "--scale", "8",
                         "--classes", "4", "--window", "7",
                         "--sim-window", "9", "--n-similar", "8",
                         "--threads", threads])
        assert code == 0
        outputs.append((out.parent / (out.name + ".bin")).read_bytes())
    assert outputs[0] == outputs[1]  # payloads bit-identical
    assert np.array_equal(read_raster(tmp_path / "pred_t1.brf").data,
                          read_raster(tmp_path / "pred_t4.brf").data)
    announce(7, "fuse with --threads 1 and --threads 4 produced "
                "bit-identical rasters")


def test_criterion_8_desk_scale_performance():
    spec = SceneSpec(height=1500, width=1500, scale=30, n_objects=60,
                     n_classes=5, bands=4, change="object",
                     change_scale=0.10, smooth_change=0.03, noise=0.01,
                     texture=0.004)
    scene = generate_synthetic_scene(spec, seed=1)
    cfg = FusionConfig(scale=30)
    start = time.perf_counter()
    result = fuse(scene.fine_tb, scene.coarse_tp, cfg)
    elapsed = time.perf_counter() - start
    assert result.prediction.shape == (1500, 1500, 4)
    assert elapsed < 120.0, f"pipeline took {elapsed:.1f}s"
    slowest = max(result.timings, key=result.timings.get)
    announce(8, f"1500x1500x4 at scale 30 fused in {elapsed:.1f}s "
                f"(budget 120s; slowest stage: {slowest} "
                f"{result.timings[slowest]:.1f}s; backend "
                f"{backend_name()})")
