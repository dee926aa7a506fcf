"""Evaluation harness for learned representations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .errors import DegenerateLabelsError, DimensionError, ParameterError
from .kernel import frob_distance, ideal_kernel, median_distance_sigma, rbf_kernel
from .linalg import as_matrix, pca_fit, pca_project, sym_eig

C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
_KNN_CHUNK = 2_000_000


def knn1_classify(train: LabeledDataset, test_features, test_labels=None):
    """Euclidean 1-NN; equal distances resolve to the lowest training index.

    Returns ``(predictions, accuracy)`` with ``accuracy=None`` when no test
    labels are given.
    """
    xtr = as_matrix(train.features, "train features")
    xte = as_matrix(test_features, "test features")
    if xtr.shape[0] == 0:
        raise ParameterError("empty training set")
    if xtr.shape[1] != xte.shape[1]:
        raise DimensionError(f"train has {xtr.shape[1]} columns, test has {xte.shape[1]}")
    step = max(1, _KNN_CHUNK // max(1, xtr.shape[0] * xtr.shape[1]))
    nearest = np.empty(xte.shape[0], dtype=np.int64)
    for s in range(0, xte.shape[0], step):
        diff = xte[s:s + step, None, :] - xtr[None, :, :]
        nearest[s:s + step] = np.argmin(np.sum(diff * diff, axis=2), axis=1)
    pred = train.labels[nearest]
    acc = None if test_labels is None else float(np.mean(pred == np.asarray(test_labels)))
    return pred, acc


@dataclass
class LinearSvmModel:
    classes: np.ndarray
    weights: np.ndarray  # (d, n_classes)
    biases: np.ndarray  # (n_classes,)
    C: float
    validation_accuracy: float | None = None


def _pegasos_ovr(x, y_pm, C, rng, epochs, batch):
    n, d = x.shape
    xa = np.hstack([x, np.ones((n, 1))])
    reg = 1.0 / (C * n)
    radius = 1.0 / np.sqrt(reg)
    w = np.zeros((d + 1, y_pm.shape[1]))
    avg = np.zeros_like(w)
    steps = max(1, epochs * n // batch)
    start_avg = steps // 2
    for t in range(1, steps + 1):
        idx = rng.integers(0, n, size=batch)
        xb, yb = xa[idx], y_pm[idx]
        active = (yb * (xb @ w)) < 1.0
        eta = 1.0 / (reg * t)
        w *= 1.0 - eta * reg
        w += (eta / batch) * (xb.T @ (active * yb))
        norms = np.linalg.norm(w, axis=0)
        w *= np.minimum(1.0, radius / np.maximum(norms, 1e-300))
        if t > start_avg:
            avg += (w - avg) / (t - start_avg)
    return avg


def svm_fit(data: LabeledDataset, C: float, seed: int = 0, epochs: int = 500, batch: int = 64) -> LinearSvmModel:
    """One-vs-rest linear SVM (hinge + L2) by mini-batch Pegasos with iterate averaging."""
    if C <= 0:
        raise ParameterError("C must be positive")
    x = as_matrix(data.features, "features")
    classes = np.unique(data.labels)
    if classes.size < 2:
        raise DegenerateLabelsError("linear SVM needs at least two classes")
    y_pm = np.where(data.labels[:, None] == classes[None, :], 1.0, -1.0)
    rng = np.random.default_rng(seed)
    w = _pegasos_ovr(x, y_pm, C, rng, epochs, min(batch, x.shape[0]))
    return LinearSvmModel(classes, w[:-1].copy(), w[-1].copy(), float(C))


def svm_decision(model: LinearSvmModel, x) -> np.ndarray:
    x = as_matrix(x, "X")
    if x.shape[1] != model.weights.shape[0]:
        raise DimensionError(f"model expects {model.weights.shape[0]} features, got {x.shape[1]}")
    return x @ model.weights + model.biases


def svm_predict(model: LinearSvmModel, x) -> np.ndarray:
    # argmax returns the first maximum, i.e. the smallest class id on ties
    return model.classes[np.argmax(svm_decision(model, x), axis=1)]


def svm_train(data: LabeledDataset, C_grid=C_GRID, val: LabeledDataset | None = None, seed: int = 0,
              **fit_kw) -> LinearSvmModel:
    """Fit one model per C and keep the one with the best validation accuracy (first wins ties)."""
    val = data if val is None else val
    best = None
    for C in C_grid:
        model = svm_fit(data, C, seed, **fit_kw)
        model.validation_accuracy = float(np.mean(svm_predict(model, val.features) == val.labels))
        if best is None or model.validation_accuracy > best.validation_accuracy:
            best = model
    return best


def accuracy(model: LinearSvmModel, data: LabeledDataset) -> float:
    return float(np.mean(svm_predict(model, data.features) == data.labels))


@dataclass
class NystromFeatureMap:
    """Explicit RBF feature map ``phi(x) = k(x, L) U Lambda^{-1/2}`` over landmarks ``L``."""

    landmarks: np.ndarray
    sigma: float
    projection: np.ndarray

    def transform(self, x) -> np.ndarray:
        return rbf_kernel(x, self.landmarks, self.sigma) @ self.projection


def nystrom_rbf_features(x, n_landmarks: int = 300, sigma: float | None = None, seed: int = 0) -> NystromFeatureMap:
    x = as_matrix(x, "X")
    n_landmarks = min(n_landmarks, x.shape[0])
    idx = np.sort(np.random.default_rng(seed).choice(x.shape[0], size=n_landmarks, replace=False))
    landmarks = x[idx]
    sigma = median_distance_sigma(landmarks) if sigma is None else sigma
    eig = sym_eig(rbf_kernel(landmarks, landmarks, sigma))
    keep = eig.eigenvalues > 1e-10 * eig.eigenvalues[0]
    proj = eig.eigenvectors[:, keep] / np.sqrt(eig.eigenvalues[keep])
    return NystromFeatureMap(landmarks, float(sigma), proj)


def improvement_table(distances: dict) -> dict:
    """Percent improvement of each row kernel over each column kernel: ``(L_col - L_row) / L_row``.

    A row at distance zero improves infinitely on any worse column.
    """
    def pct(r, c):
        gap = distances[c] - distances[r]
        if gap == 0:
            return 0.0
        return 100.0 * gap / distances[r] if distances[r] else float(np.copysign(np.inf, gap))

    return {r: {c: pct(r, c) for c in distances} for r in distances}


def table1_report(c, p, k_ae, labels) -> dict:
    """Distances of the prior, plain-AE and dkAE code kernels to the ideal kernel of ``labels``."""
    k_i = ideal_kernel(labels)
    distances = {"P": frob_distance(p, k_i), "K_AE": frob_distance(k_ae, k_i), "C": frob_distance(c, k_i)}
    return {"distance_to_ideal": distances, "improvement_percent": improvement_table(distances)}


def add_noise(x, kind: str = "gaussian", level: float = 0.25, seed: int = 0) -> np.ndarray:
    """``gaussian``: add N(0, level^2) then clip to [0, 1]; ``masking``: zero entries with probability ``level``."""
    x = as_matrix(x, "X")
    rng = np.random.default_rng(seed)
    if kind == "gaussian":
        if level < 0:
            raise ParameterError("noise std must be non-negative")
        if level == 0:
            return x.copy()
        return np.clip(x + rng.normal(0.0, level, size=x.shape), 0.0, 1.0)
    if kind == "masking":
        if not 0.0 <= level <= 1.0:
            raise ParameterError("masking rate must lie in [0, 1]")
        return np.where(rng.random(x.shape) < level, 0.0, x)
    raise ParameterError(f"unknown noise kind {kind!r}")


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia_history: list
    iterations: int

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _sq_dist(x, c):
    d2 = np.sum(x * x, axis=1)[:, None] + np.sum(c * c, axis=1)[None, :] - 2.0 * x @ c.T
    return np.maximum(d2, 0.0)


def kmeans(x, k: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeding.

    Stops at an assignment fixpoint or after ``max_iter`` iterations. A
    cluster that empties is re-seeded at the point farthest from its centroid.
    """
    x = as_matrix(x, "X")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ParameterError(f"k={k} must be in [1, n={n}]")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    closest = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            nxt = int(rng.choice(np.setdiff1d(np.arange(n), chosen)))
        chosen.append(nxt)
        closest = np.minimum(closest, np.sum((x - x[nxt]) ** 2, axis=1))
    centroids = x[chosen].copy()
    assign = np.argmin(_sq_dist(x, centroids), axis=1)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        for j in range(k):
            members = assign == j
            if members.any():
                centroids[j] = x[members].mean(axis=0)
        counts = np.bincount(assign, minlength=k)
        for j in np.flatnonzero(counts == 0):
            own = np.sum((x - centroids[assign]) ** 2, axis=1)
            far = int(np.argmax(own))
            assign[far] = j
            centroids[j] = x[far]
        history.append(float(np.sum((x - centroids[assign]) ** 2)))
        new_assign = np.argmin(_sq_dist(x, centroids), axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return KMeansResult(centroids, assign, history, it)


def interpolate_walk(c_start, c_end, steps: int) -> np.ndarray:
    """``steps`` evenly spaced points ``(1 - t) c_start + t c_end`` for t from 0 to 1."""
    a = np.asarray(c_start, dtype=np.float64)
    b = np.asarray(c_end, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"endpoint shapes {a.shape} and {b.shape} differ")
    if steps < 2:
        raise ParameterError("a walk needs at least two steps")
    t = np.linspace(0.0, 1.0, steps)[:, None]
    return (1.0 - t) * a[None, :] + t * b[None, :]


def embed_2d(train_codes, test_codes):
    """PCA fitted on training codes, returning 2-D coordinates for both sets."""
    model = pca_fit(train_codes, 2)
    return pca_project(model, train_codes), pca_project(model, test_codes)
