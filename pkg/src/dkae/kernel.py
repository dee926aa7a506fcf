"""Kernel-matrix utilities: alignment, normalised Frobenius distance, ideal and RBF kernels."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import DegenerateInputError, DimensionError, ParameterError
from .linalg import as_matrix, check_symmetric, load_matrix, save_matrix

PROVENANCES = ("pck", "rbf", "ideal", "code-inner-product", "loaded")


@dataclass(frozen=True)
class KernelMatrix:
    values: np.ndarray
    provenance: str = "loaded"

    def __post_init__(self):
        values = as_matrix(self.values, "kernel")
        check_symmetric(values, name="kernel")
        if self.provenance not in PROVENANCES:
            raise ParameterError(f"unknown provenance {self.provenance!r}")
        if not np.any(values):
            raise DegenerateInputError("kernel matrix has zero Frobenius norm")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def submatrix(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        return self.values[np.ix_(idx, idx)]

    def save(self, path) -> None:
        """DKMAT1 blob at ``path`` plus a ``<path>.json`` sidecar."""
        path = Path(path)
        save_matrix(path, self.values)
        path.with_name(path.name + ".json").write_text(json.dumps({"provenance": self.provenance, "n": self.n}))

    @classmethod
    def load(cls, path) -> "KernelMatrix":
        path = Path(path)
        side = path.with_name(path.name + ".json")
        provenance = json.loads(side.read_text())["provenance"] if side.exists() else "loaded"
        return cls(load_matrix(path), provenance)


def _values(k) -> np.ndarray:
    return k.values if isinstance(k, KernelMatrix) else np.asarray(k, dtype=np.float64)


def _normalised_pair(c, p):
    c, p = _values(c), _values(p)
    if c.shape != p.shape:
        raise DimensionError(f"shape mismatch {c.shape} vs {p.shape}")
    nc, np_ = np.linalg.norm(c), np.linalg.norm(p)
    if nc == 0.0 or np_ == 0.0:
        raise DegenerateInputError("zero-norm kernel matrix")
    return c, p, nc, np_


def frob_distance(c, p) -> float:
    """``|| C/||C||_F - P/||P||_F ||_F``, in [0, 2] and zero iff C is a positive multiple of P."""
    c, p, nc, np_ = _normalised_pair(c, p)
    return float(np.linalg.norm(c / nc - p / np_))


def alignment(c, p) -> float:
    """Kernel alignment ``<C, P>_F / (||C||_F ||P||_F)``."""
    c, p, nc, np_ = _normalised_pair(c, p)
    return float(np.sum(c * p) / (nc * np_))


def ideal_kernel(labels) -> KernelMatrix:
    labels = np.asarray(labels).ravel()
    if labels.size == 0:
        raise ParameterError("empty label vector")
    return KernelMatrix((labels[:, None] == labels[None, :]).astype(np.float64), "ideal")


def sq_distances(x, y) -> np.ndarray:
    x, y = as_matrix(x, "X"), as_matrix(y, "Y")
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"column mismatch {x.shape[1]} vs {y.shape[1]}")
    return cdist(x, y, "sqeuclidean")


def rbf_kernel(x, y, sigma: float) -> np.ndarray:
    """``exp(-||x_i - y_j||^2 / (2 sigma^2))``."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    return np.exp(-sq_distances(x, y) / (2.0 * sigma * sigma))


def median_distance_sigma(x, fraction: float = 1.0) -> float:
    """``fraction`` times the median pairwise Euclidean distance of the rows of ``x``.

    ``fraction=0.15`` gives the common rule of thumb for width selection.
    """
    x = as_matrix(x, "X")
    if x.shape[0] < 2:
        raise ParameterError("need at least two points for a median distance")
    med = float(np.median(pdist(x)))
    if med <= 0:
        raise DegenerateInputError("all points coincide; median distance is zero")
    return fraction * med
