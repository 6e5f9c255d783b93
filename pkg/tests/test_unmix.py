import numpy as np
import pytest

from obsum.bvls import bvls
from obsum.preprocess import ClassMap, ObjectMap
from obsum.raster import Raster, block_mean_upscale
from obsum.unmix import (FractionCube, UnmixError, class_fractions,
                         olu_predict, unmix_window)


def checkered_scene(s=4, hc=6, wc=6, n_c=3, seed=0):
    """Piecewise-constant truth: rectangles of distinct classes.

    Returns (classmap, objectmap, truth reflectance (H,W,B), class spectra).
    """
    rng = np.random.default_rng(seed)
    h, w = hc * s, wc * s
    labels = np.zeros((h, w), dtype=np.int32)
    objects = np.zeros((h, w), dtype=np.int32)
    # vertical stripes of random widths, one object per stripe
    cuts = np.sort(rng.choice(np.arange(3, w - 3), size=4, replace=False))
    bounds = [0, *cuts.tolist(), w]
    for i in range(len(bounds) - 1):
        labels[:, bounds[i]:bounds[i + 1]] = i % n_c
        objects[:, bounds[i]:bounds[i + 1]] = i
    spectra = rng.uniform(0.15, 0.85, size=(n_c, 2))
    truth = spectra[labels]
    cm = ClassMap(labels, n_c)
    om = ObjectMap(objects, len(bounds) - 1)
    return cm, om, truth, spectra


# ----------------------------------------------------------------- fractions

def test_fractions_counting():
    labels = np.array([[1, 1], [2, 3]], dtype=np.int32)
    cube = class_fractions(ClassMap(labels, 4), 2)
    assert cube.fractions[0, 0, 1] == 0.5
    assert cube.fractions[0, 0, 2] == 0.25
    assert cube.fractions[0, 0, 3] == 0.25
    assert cube.fractions[0, 0, 0] == 0.0


def test_fractions_pure_block():
    labels = np.zeros((4, 4), dtype=np.int32)
    cube = class_fractions(ClassMap(labels, 2), 4)
    assert cube.fractions[0, 0, 0] == 1.0
    assert cube.fractions[0, 0, 1] == 0.0


def test_fractions_partition():
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 5, (12, 18)).astype(np.int32)
    cube = class_fractions(ClassMap(labels, 5), 3)
    assert np.allclose(cube.fractions.sum(axis=2), 1.0, atol=1e-9)


def test_fractions_rejects_bad_dims():
    with pytest.raises(UnmixError, match="divisible"):
        class_fractions(ClassMap(np.zeros((5, 4), np.int32), 2), 2)


# ------------------------------------------------------------------- windows

def test_window_recovers_endmembers():
    # 3x3 coarse grid, alternating pure pixels of two classes
    fr = np.zeros((3, 3, 2))
    pure = (np.add.outer(np.arange(3), np.arange(3)) % 2).astype(int)
    fr[:, :, 0] = pure == 0
    fr[:, :, 1] = pure == 1
    coarse_vals = np.where(pure == 0, 0.2, 0.8)[:, :, None]
    sol = unmix_window(Raster.from_array(coarse_vals),
                       FractionCube(fr, 2), center=(1, 1), w=3)
    assert sol.solved.all()
    assert np.allclose(sol.values[0], [0.2, 0.8], atol=1e-6)


def test_window_recovers_random_feasible_mixture():
    rng = np.random.default_rng(6)
    for _ in range(20):
        fr = rng.dirichlet(np.ones(3), size=(5, 5))
        target = rng.uniform(0.05, 0.95, size=(2, 3))  # (bands, classes)
        coarse = np.einsum("ijc,bc->ijb", fr, target)
        sol = unmix_window(Raster.from_array(coarse),
                           FractionCube(fr, 3), center=(2, 2), w=5)
        a = fr.reshape(-1, 3)
        for b in range(2):
            resid = a @ sol.values[b] - coarse[:, :, b].ravel()
            assert np.linalg.norm(resid) < 1e-6


def test_window_flags_absent_class():
    fr = np.zeros((3, 3, 3))
    fr[:, :, 0] = 0.5
    fr[:, :, 1] = 0.5  # class 2 absent everywhere
    coarse = np.full((3, 3, 1), 0.4)
    sol = unmix_window(Raster.from_array(coarse), FractionCube(fr, 3),
                       center=(1, 1), w=3)
    assert not sol.solved[2]
    assert sol.solved[0] and sol.solved[1]
    # solution for the present classes matches the column-removed system
    direct = bvls(fr[:, :, :2].reshape(-1, 2), coarse[:, :, 0].ravel())
    assert np.allclose(sol.values[0, :2], direct, atol=1e-12)


def test_window_rejects_even_size():
    fr = FractionCube(np.ones((3, 3, 1)), 1)
    with pytest.raises(UnmixError, match="odd"):
        unmix_window(Raster.from_array(np.full((3, 3, 1), 0.5)), fr,
                     (1, 1), w=4)


def test_window_fully_masked_errors():
    fr = FractionCube(np.ones((3, 3, 1)), 1)
    coarse = Raster.from_array(np.full((3, 3, 1), -9999.0), nodata=-9999.0)
    with pytest.raises(UnmixError, match="fully masked"):
        unmix_window(coarse, fr, (1, 1), w=3)


# ---------------------------------------------------------------- prediction

def test_olu_constant_coarse_gives_constant():
    s = 4
    coarse = Raster.from_array(np.full((3, 3, 2), 0.37))
    labels = np.random.default_rng(0).integers(0, 2, (12, 12)).astype(
        np.int32)
    cm = ClassMap(labels, 2)
    om = ObjectMap(np.zeros((12, 12), np.int32), 1)
    pred = olu_predict(coarse, cm, om, s, w=3)
    assert np.allclose(pred.data, 0.37, atol=1e-9)


def test_olu_exact_recovery_on_noiseless_scene():
    cm, om, truth, _ = checkered_scene()
    coarse = block_mean_upscale(Raster.from_array(truth), 4)
    pred = olu_predict(coarse, cm, om, 4, w=5)
    assert np.abs(pred.data - truth).max() < 1e-6


def test_olu_output_is_object_constant():
    rng = np.random.default_rng(3)
    cm, om, truth, _ = checkered_scene(seed=5)
    noisy = np.clip(truth + rng.normal(0, 0.02, truth.shape), 0, 1)
    coarse = block_mean_upscale(Raster.from_array(noisy), 4)
    pred = olu_predict(coarse, cm, om, 4, w=5)
    for obj in range(om.object_count):
        vals = pred.data[om.labels == obj]
        assert vals.var(axis=0).max() <= 1e-12


def test_olu_prediction_within_unit_interval():
    rng = np.random.default_rng(10)
    cm, om, truth, _ = checkered_scene(seed=9)
    noisy = np.clip(truth + rng.normal(0, 0.05, truth.shape), 0, 1)
    coarse = block_mean_upscale(Raster.from_array(noisy), 4)
    pred = olu_predict(coarse, cm, om, 4, w=5)
    assert pred.data.min() >= 0.0
    assert pred.data.max() <= 1.0


def test_olu_partial_mask_tolerated():
    cm, om, truth, _ = checkered_scene()
    coarse = block_mean_upscale(Raster.from_array(truth), 4)
    data = coarse.data.copy()
    data[2, 2, :] = -9999.0
    masked = Raster(coarse.descriptor, data).with_data(data,
                                                       nodata=-9999.0)
    pred = olu_predict(masked, cm, om, 4, w=5)
    assert np.isfinite(pred.data).all()
    assert np.abs(pred.data - truth).max() < 1e-5


def test_olu_dimension_checks():
    cm = ClassMap(np.zeros((8, 8), np.int32), 2)
    om = ObjectMap(np.zeros((8, 8), np.int32), 1)
    coarse = Raster.from_array(np.full((3, 3, 1), 0.5))
    with pytest.raises(UnmixError, match="not .*the coarse grid"):
        olu_predict(coarse, cm, om, 4, w=3)
