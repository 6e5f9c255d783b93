"""Base-date preprocessing: classification, segmentation, refinement.

Produces the object-level land-cover map that drives unmixing: an
unsupervised K-Means classification of the fine image, a segmentation into
image objects (built-in graph-based segmenter, or an externally produced
label raster), and a per-object majority vote that makes every object
single-class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from obsum import _kernels
from obsum.raster import Raster, RasterError


class PreprocessError(ValueError):
    """Invalid inputs to a preprocessing step."""


@dataclass
class ClassMap:
    labels: np.ndarray  # (height, width) int32, values in [0, n_classes)
    n_classes: int

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 2:
            raise PreprocessError("class labels must be a 2-D grid")
        if self.n_classes < 2:
            raise PreprocessError("need at least 2 classes")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise PreprocessError(
                f"class ids must lie in [0, {self.n_classes})")

    @property
    def shape(self):
        return self.labels.shape

    def to_raster(self) -> Raster:
        return Raster.from_array(self.labels.astype(np.float32))

    @classmethod
    def from_raster(cls, raster: Raster, n_classes: int | None = None):
        labels = np.rint(raster.data[:, :, 0]).astype(np.int32)
        if n_classes is None:
            n_classes = int(labels.max()) + 1
        return cls(labels, n_classes)


@dataclass
class ObjectMap:
    labels: np.ndarray  # (height, width) int32, contiguous ids
    object_count: int

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 2:
            raise PreprocessError("object labels must be a 2-D grid")
        if self.object_count < 1:
            raise PreprocessError("object map must contain an object")
        if self.labels.min() < 0 or self.labels.max() >= self.object_count:
            raise PreprocessError(
                f"object ids must lie in [0, {self.object_count})")

    @property
    def shape(self):
        return self.labels.shape

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(),
                           minlength=self.object_count)

    def to_raster(self) -> Raster:
        return Raster.from_array(self.labels.astype(np.float32))

    @classmethod
    def from_raster(cls, raster: Raster):
        labels = np.rint(raster.data[:, :, 0]).astype(np.int64)
        # re-normalize: external rasters may skip label values
        uniq, inverse = np.unique(labels.ravel(), return_inverse=True)
        return cls(inverse.astype(np.int32).reshape(labels.shape),
                   len(uniq))


def _require_gapless(fine: Raster, op: str) -> np.ndarray:
    if not fine.valid_mask().all():
        raise PreprocessError(f"{op} requires a nodata-free fine image")
    return fine.data.astype(np.float64)


def _distinct_row_count(x: np.ndarray, stop_at: int) -> int:
    """Number of distinct rows, counting no further than stop_at."""
    packed = np.ascontiguousarray(x).view(
        np.dtype((np.void, x.dtype.itemsize * x.shape[1]))).ravel()
    return min(len(np.unique(packed)), stop_at)


def _kmeans(x: np.ndarray, k: int, rng: np.random.Generator,
            max_iter: int):
    """Lloyd iterations with k-means++ seeding.

    Returns (labels, centroids, per-iteration objective values).  Ties in
    the assignment step go to the lowest centroid index; empty clusters
    keep their previous centroid.
    """
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[int(rng.integers(n))]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for c in range(1, k):
        cum = np.cumsum(d2)
        pick = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        centroids[c] = x[min(pick, n - 1)]
        d2 = np.minimum(d2, np.sum((x - centroids[c]) ** 2, axis=1))

    labels = np.full(n, -1, dtype=np.int32)
    objectives = []
    for _ in range(max_iter):
        # squared distances via expansion; argmin ties pick the first index
        dots = x @ centroids.T
        dist2 = (np.sum(x * x, axis=1)[:, None] - 2.0 * dots
                 + np.sum(centroids * centroids, axis=1)[None, :])
        new_labels = np.argmin(dist2, axis=1).astype(np.int32)
        objectives.append(float(np.take_along_axis(
            dist2, new_labels[:, None].astype(np.int64), axis=1).sum()))
        if (new_labels == labels).all():
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        for b in range(x.shape[1]):
            sums = np.bincount(labels, weights=x[:, b], minlength=k)
            nonempty = counts > 0
            centroids[nonempty, b] = sums[nonempty] / counts[nonempty]
    return labels, centroids, objectives


def kmeans_classify(fine: Raster, n_classes: int, seed: int = 42,
                    max_iter: int = 100) -> ClassMap:
    """Cluster the fine image's spectra into n_classes land-cover classes.

    Deterministic for a fixed seed; iteration stops when no assignment
    changes or after max_iter passes.
    """
    if n_classes < 2:
        raise PreprocessError("n_classes must be >= 2")
    data = _require_gapless(fine, "kmeans_classify")
    h, w, b = data.shape
    x = data.reshape(h * w, b)
    if _distinct_row_count(x, n_classes) < n_classes:
        raise PreprocessError(
            f"image has fewer than {n_classes} distinct spectra")
    rng = np.random.default_rng(seed)
    labels, _, _ = _kmeans(x, n_classes, rng, max_iter)
    return ClassMap(labels.reshape(h, w), n_classes)


def _relabel_first_occurrence(roots: np.ndarray) -> tuple[np.ndarray, int]:
    """Map arbitrary component roots to contiguous ids.

    Roots are the minimum flat pixel index of each component, so sorting
    them orders objects by first row-major occurrence.
    """
    uniq, inverse = np.unique(roots.ravel(), return_inverse=True)
    return inverse.astype(np.int32).reshape(roots.shape), len(uniq)


def _grid_edges(data: np.ndarray):
    """4-connectivity edges and Euclidean spectral weights."""
    h, w, _ = data.shape
    idx = np.arange(h * w).reshape(h, w)
    right_a = idx[:, :-1].ravel()
    right_b = idx[:, 1:].ravel()
    right_w = np.sqrt(np.sum(
        (data[:, :-1, :] - data[:, 1:, :]) ** 2, axis=2)).ravel()
    down_a = idx[:-1, :].ravel()
    down_b = idx[1:, :].ravel()
    down_w = np.sqrt(np.sum(
        (data[:-1, :, :] - data[1:, :, :]) ** 2, axis=2)).ravel()
    ea = np.concatenate([right_a, down_a])
    eb = np.concatenate([right_b, down_b])
    ew = np.concatenate([right_w, down_w])
    return ea, eb, ew


def _merge_small_segments(labels: np.ndarray, data: np.ndarray,
                          min_size: int) -> np.ndarray:
    """Fold segments below min_size into their spectrally closest neighbor.

    Operates on segment statistics, so the cost scales with the number of
    segments rather than pixels.  Deterministic: undersized segments are
    processed smallest first and ties pick the lowest segment id.
    """
    if min_size <= 1:
        return labels
    h, w, nb = data.shape
    flat = labels.ravel()
    k = int(flat.max()) + 1
    size = np.bincount(flat, minlength=k).astype(np.int64)
    mean = np.empty((k, nb))
    for b in range(nb):
        mean[:, b] = np.bincount(flat, weights=data[:, :, b].ravel(),
                                 minlength=k) / size

    adjacency: list[set[int]] = [set() for _ in range(k)]
    for la, lb in ((labels[:, :-1], labels[:, 1:]),
                   (labels[:-1, :], labels[1:, :])):
        pairs = np.stack([la.ravel(), lb.ravel()], axis=1)
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        for a, b in np.unique(pairs, axis=0):
            adjacency[a].add(int(b))
            adjacency[b].add(int(a))

    parent = np.arange(k)

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    changed = True
    while changed:
        changed = False
        undersized = sorted((int(size[r]), r) for r in range(k)
                            if parent[r] == r and size[r] < min_size)
        for _, seg in undersized:
            seg = find(seg)
            if size[seg] >= min_size:
                continue
            neighbors = {find(n) for n in adjacency[seg]} - {seg}
            if not neighbors:
                continue
            best = min(neighbors, key=lambda n: (
                float(np.sum((mean[n] - mean[seg]) ** 2)), n))
            root, child = (seg, best) if seg < best else (best, seg)
            total = size[root] + size[child]
            mean[root] = (mean[root] * size[root]
                          + mean[child] * size[child]) / total
            size[root] = total
            adjacency[root] |= adjacency[child]
            parent[child] = root
            changed = True

    roots = np.array([find(i) for i in range(k)])
    return roots[flat].reshape(h, w)


def segment_builtin(fine: Raster, scale_param: float = 100.0 / 255.0,
                    min_size: int = 1) -> ObjectMap:
    """Segment the fine image into spectrally homogeneous objects.

    Graph-based segmentation over the 4-connected pixel grid with Euclidean
    spectral edge weights, followed by absorption of segments smaller than
    min_size into their most similar neighbor.  Deterministic.
    """
    data = _require_gapless(fine, "segment_builtin")
    h, w, _ = data.shape
    ea, eb, ew = _grid_edges(data)
    order = np.argsort(ew, kind="stable")
    roots = _kernels.fh_segment(ea, eb, order, ew, h * w,
                                float(scale_param))
    labels, _ = _relabel_first_occurrence(roots.reshape(h, w))
    labels = _merge_small_segments(labels, data, int(min_size))
    labels, count = _relabel_first_occurrence(labels)
    return ObjectMap(labels, count)


def ingest_segmentation(labels: Raster, fine: Raster) -> ObjectMap:
    """Normalize an externally produced segmentation raster.

    Arbitrary integer labels become contiguous ids, disconnected regions
    sharing a label are split (4-connectivity), and nodata label pixels
    become single-pixel objects.
    """
    if labels.descriptor.bands != 1:
        raise PreprocessError("segmentation raster must be single band")
    if labels.shape[:2] != fine.shape[:2]:
        raise PreprocessError(
            f"segmentation dimensions {labels.shape[:2]} do not match the "
            f"fine image {fine.shape[:2]}")
    valid = labels.valid_mask()[:, :, 0]
    values = np.where(valid, np.rint(labels.data[:, :, 0]), 0)
    roots = _kernels.split_components(values.astype(np.int64), valid)
    out, count = _relabel_first_occurrence(roots)
    return ObjectMap(out, count)


def refine_classmap(classes: ClassMap, objects: ObjectMap) -> ClassMap:
    """Replace each pixel's class with the modal class of its object.

    Ties break toward the smallest class id, so refinement is idempotent
    and every object ends up single-class.
    """
    if classes.shape != objects.shape:
        raise PreprocessError(
            f"class map {classes.shape} and object map {objects.shape} "
            "dimensions differ")
    n_c = classes.n_classes
    joint = objects.labels.ravel().astype(np.int64) * n_c \
        + classes.labels.ravel()
    counts = np.bincount(joint, minlength=objects.object_count * n_c)
    modes = counts.reshape(objects.object_count, n_c).argmax(axis=1)
    refined = modes[objects.labels.ravel()].astype(np.int32)
    return ClassMap(refined.reshape(classes.shape), n_c)
