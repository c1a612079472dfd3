"""Audit metrics for generated data.

Quality and coverage are measured with k-nearest-neighbour manifold
membership (improved precision / improved recall); memorization with the
authenticity rate (fraction of generated points that are not noisy copies of
training points) and with the cell-partitioned, z-scored Mann-Whitney
data-copying score

    ct = sum_pi P(pi) z_U(L_pi(test), L_pi(gen)) / sum_pi P(pi)

over the k-means cells of the training set that hold enough generated
samples, where L_pi collects squared distances to the nearest training
point. ct << 0 flags data copying, ct >> 0 underfitting. A cross-pixel
correlation statistic quantifies long-range structure in sampled canvases.
"""

from __future__ import annotations

from dataclasses import dataclass
import warnings

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import rankdata


@dataclass
class FeatureSet:
    """Non-empty collection of equal-dimension feature vectors."""

    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if self.vectors.size == 0:
            raise ValueError("feature set is empty")
        if self.vectors.ndim != 2:
            raise ValueError("feature vectors must share one dimension")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _as_features(x) -> FeatureSet:
    return x if isinstance(x, FeatureSet) else FeatureSet(np.asarray(x, dtype=float))


def knn_radius(fs: FeatureSet, k: int) -> np.ndarray:
    """Distance from each point to its k-th nearest other point (brute force)."""
    fs = _as_features(fs)
    if not 1 <= k < len(fs):
        raise ValueError(f"k must satisfy 1 <= k < {len(fs)}, got {k}")
    d = cdist(fs.vectors, fs.vectors)
    np.fill_diagonal(d, np.inf)
    return np.sort(d, axis=1)[:, k - 1]


def _membership(candidates: np.ndarray, manifold: FeatureSet, k: int) -> np.ndarray:
    """f(phi, Phi): 1 iff phi falls inside some manifold point's k-NN ball."""
    radii = knn_radius(manifold, k)
    d = cdist(candidates, manifold.vectors)
    return (d <= radii[None, :]).any(axis=1)


def improved_precision_recall(real: FeatureSet, gen: FeatureSet, k: int) -> tuple[float, float]:
    """Manifold membership rates: precision of generated, recall of real."""
    real, gen = _as_features(real), _as_features(gen)
    if k >= min(len(real), len(gen)):
        raise ValueError(f"k={k} too large for set sizes {len(real)}, {len(gen)}")
    precision = float(_membership(gen.vectors, real, k).mean())
    recall = float(_membership(real.vectors, gen, k).mean())
    return precision, recall


def train_nn_gaps(train: FeatureSet) -> np.ndarray:
    """Distance from each training point to its nearest other training point."""
    train = _as_features(train)
    if len(train) < 2:
        raise ValueError("need at least 2 training points")
    d = cdist(train.vectors, train.vectors)
    np.fill_diagonal(d, np.inf)
    return d.min(axis=1)


def authenticity(train: FeatureSet, gen: FeatureSet) -> float:
    """Fraction of generated points that are not noisy copies of training points.

    A generated point is flagged as a copy when it sits closer to its nearest
    training point than that training point sits to its own nearest
    neighbour.
    """
    train, gen = _as_features(train), _as_features(gen)
    gaps = train_nn_gaps(train)
    if np.all(gaps == 0):
        warnings.warn("degenerate training set: all points identical; nothing can be flagged",
                      RuntimeWarning, stacklevel=2)
    d = cdist(gen.vectors, train.vectors)
    nearest = d.argmin(axis=1)
    flagged = d[np.arange(len(gen)), nearest] < gaps[nearest]
    return float(1.0 - flagged.mean())


def mann_whitney_z(a, b) -> float:
    """z-scored rank-sum statistic of b against a, midranks for ties.

    z < 0 iff the b values are systematically smaller than the a values;
    z = (U - |a||b|/2) / sqrt(|a||b|(|a|+|b|+1)/12).
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    n, m = a.size, b.size
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[n:].sum() - m * (m + 1) / 2.0
    mu = n * m / 2.0
    sigma = np.sqrt(n * m * (n + m + 1) / 12.0)
    return float((u - mu) / sigma)


def kmeans_fit(points: np.ndarray, k: int, rng: np.random.Generator,
               iters: int = 50, restarts: int = 5) -> tuple[np.ndarray, float]:
    """Plain Lloyd iterations with seeded restarts; best inertia wins.

    Empty clusters are reseeded to the point farthest from its assigned
    centroid, which keeps every restart deterministic.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must satisfy 1 <= k <= {n}")
    best_centroids, best_inertia = None, np.inf
    for _ in range(restarts):
        centroids = points[rng.choice(n, size=k, replace=False)].copy()
        assign = None
        for _ in range(iters):
            d = cdist(points, centroids, metric="sqeuclidean")
            new_assign = d.argmin(axis=1)
            for cell in range(k):
                member = new_assign == cell
                if member.any():
                    centroids[cell] = points[member].mean(axis=0)
                else:
                    centroids[cell] = points[d.min(axis=1).argmax()]
            if assign is not None and np.array_equal(assign, new_assign):
                break
            assign = new_assign
        d = cdist(points, centroids, metric="sqeuclidean")
        inertia = float(d.min(axis=1).sum())
        if inertia < best_inertia:
            best_centroids, best_inertia = centroids.copy(), inertia
    return best_centroids, best_inertia


def assign_cells(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return cdist(points, centroids, metric="sqeuclidean").argmin(axis=1)


def nearest_train_sqdist(points: np.ndarray, train: np.ndarray) -> np.ndarray:
    """d(y) = min over training points of the squared Euclidean distance."""
    return cdist(points, train, metric="sqeuclidean").min(axis=1)


@dataclass
class PartitionStats:
    """Per-cell bookkeeping behind the data-copying score."""

    centroids: np.ndarray
    test_cells: np.ndarray
    gen_cells: np.ndarray
    p_fractions: np.ndarray    # test share per cell
    q_fractions: np.ndarray    # generated share per cell
    cell_z: np.ndarray         # nan where the cell was not retained
    retained: np.ndarray
    score: float


def ct_partition(train: FeatureSet, test: FeatureSet, gen: FeatureSet,
                 cells: int, tau: float, seed: int = 0) -> PartitionStats:
    """Full data-copying analysis; ``ct_score`` returns just the average."""
    train, test, gen = _as_features(train), _as_features(test), _as_features(gen)
    if cells < 1:
        raise ValueError("cells must be >= 1")
    centroids, _ = kmeans_fit(train.vectors, cells, np.random.default_rng(seed))
    test_cells = assign_cells(test.vectors, centroids)
    gen_cells = assign_cells(gen.vectors, centroids)
    p = np.bincount(test_cells, minlength=cells) / len(test)
    q = np.bincount(gen_cells, minlength=cells) / len(gen)
    d_test = nearest_train_sqdist(test.vectors, train.vectors)
    d_gen = nearest_train_sqdist(gen.vectors, train.vectors)

    retained = q >= tau
    if not retained.any():
        raise ValueError(f"no cell reaches the generated-share threshold tau={tau}")
    cell_z = np.full(cells, np.nan)
    for cell in np.flatnonzero(retained):
        lt = d_test[test_cells == cell]
        lg = d_gen[gen_cells == cell]
        if lt.size == 0:
            raise ValueError(f"retained cell {cell} holds no test samples")
        cell_z[cell] = mann_whitney_z(lt, lg)
    score = float(np.sum(p[retained] * cell_z[retained]) / np.sum(p[retained]))
    return PartitionStats(centroids, test_cells, gen_cells, p, q, cell_z, retained, score)


def ct_score(train: FeatureSet, test: FeatureSet, gen: FeatureSet,
             cells: int, tau: float, seed: int = 0) -> float:
    """Test-share-weighted average of per-cell z-scores; << 0 means copying."""
    return ct_partition(train, test, gen, cells, tau, seed).score


def cross_boundary_corr(samples, p1: tuple[int, int], p2: tuple[int, int]) -> tuple[float, float]:
    """Pearson correlation of channel-0 values at two pixels across samples,
    with the 1/sqrt(n) standard error."""
    if len(samples) < 30:
        raise ValueError(f"need at least 30 samples, got {len(samples)}")
    def pick(s, p):
        values = s.values if hasattr(s, "values") else np.asarray(s)
        return values[0, p[0], p[1]]
    x = np.array([pick(s, p1) for s in samples])
    y = np.array([pick(s, p2) for s in samples])
    if x.std() == 0 or y.std() == 0:
        raise ValueError("zero variance at a pixel")
    r = float(np.corrcoef(x, y)[0, 1])
    return r, 1.0 / np.sqrt(len(samples))


def embed_features(canvases, mode: str = "raw", dim: int | None = None,
                   seed: int = 0) -> FeatureSet:
    """Flatten canvases row-major, optionally through a fixed seeded Gaussian
    random projection scaled by 1/sqrt(dim)."""
    arrays = [c.values if hasattr(c, "values") else np.asarray(c, dtype=float) for c in canvases]
    if not arrays:
        raise ValueError("no canvases to embed")
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ValueError("canvases have mixed shapes")
    flat = np.stack([a.ravel() for a in arrays])
    if mode == "raw":
        return FeatureSet(flat)
    if mode == "random-projection":
        if dim is None or dim < 1:
            raise ValueError("random-projection needs a positive dim")
        proj = np.random.default_rng(seed).standard_normal((dim, flat.shape[1]))
        return FeatureSet(flat @ proj.T / np.sqrt(dim))
    raise ValueError(f"unknown embedding mode {mode!r}")
