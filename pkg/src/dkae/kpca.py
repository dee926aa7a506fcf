"""Kernel PCA on a precomputed kernel, Nystrom out-of-sample projection and kernel-ridge pre-images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidKernelError, ParameterError
from .kernel import KernelMatrix, frob_distance, median_distance_sigma, rbf_kernel
from .linalg import EigResult, as_matrix, check_symmetric, solve_spd, sym_eig

EIG_FLOOR_RTOL = 1e-10
NEG_EIG_RTOL = 1e-6


@dataclass(frozen=True)
class KpcaModel:
    eig: EigResult
    n_train: int
    usable_rank: int
    eigenvalue_floor: float
    provenance: str = "loaded"
    centered: bool = False
    train_col_means: np.ndarray | None = None
    train_grand_mean: float = 0.0


def _center_train(k):
    col = k.mean(axis=0)
    return k - col[None, :] - col[:, None] + col.mean(), col


def fit_kpca(p, center: bool = False) -> KpcaModel:
    """Eigendecompose the training kernel.

    Eigenvalues below ``1e-10 * lambda_max`` are treated as zero and excluded
    from the usable rank; an eigenvalue below ``-1e-6 * lambda_max`` means
    the kernel is not PSD and is rejected.
    """
    provenance = p.provenance if isinstance(p, KernelMatrix) else "loaded"
    k = as_matrix(p.values if isinstance(p, KernelMatrix) else p, "P")
    check_symmetric(k, name="P")
    if k.shape[0] < 2:
        raise ParameterError("kernel PCA needs at least two training points")
    col = None
    if center:
        k, col = _center_train(k)
        k = 0.5 * (k + k.T)
    eig = sym_eig(k)
    lmax = eig.eigenvalues[0]
    if lmax <= 0:
        raise InvalidKernelError("largest eigenvalue is not positive")
    if eig.eigenvalues[-1] < -NEG_EIG_RTOL * lmax:
        raise InvalidKernelError(
            f"min eigenvalue {eig.eigenvalues[-1]:.3e} below -{NEG_EIG_RTOL:g} * lambda_max")
    floor = EIG_FLOOR_RTOL * lmax
    vals = np.where(eig.eigenvalues > floor, eig.eigenvalues, 0.0)
    rank = int(np.count_nonzero(vals))
    return KpcaModel(EigResult(vals, eig.eigenvectors), k.shape[0], rank, floor, provenance,
                     center, col, 0.0 if col is None else float(col.mean()))


def _check_m(model: KpcaModel, m: int) -> None:
    if not 1 <= m <= model.usable_rank:
        raise ParameterError(f"m={m} outside [1, usable rank {model.usable_rank}]")


def project_train(model: KpcaModel, m: int) -> np.ndarray:
    """Training-set scores ``E_m Lambda_m^{1/2}``, shape (n, m)."""
    _check_m(model, m)
    return model.eig.eigenvectors[:, :m] * np.sqrt(model.eig.eigenvalues[:m])


def approx_kernel(model: KpcaModel, m: int) -> np.ndarray:
    z = project_train(model, m)
    return z @ z.T


def nystrom_project(model: KpcaModel, m: int, k_x) -> np.ndarray:
    """Out-of-sample scores ``Lambda_m^{-1/2} E_m^T k_x``.

    ``k_x`` holds kernel values against the training set: a vector of length
    ``n_train`` or a (t, n_train) matrix with one test point per row.
    """
    _check_m(model, m)
    k_x = np.asarray(k_x, dtype=np.float64)
    vector = k_x.ndim == 1
    rows = k_x[None, :] if vector else k_x
    if rows.ndim != 2 or rows.shape[1] != model.n_train:
        raise DimensionError(f"kernel rows must have length {model.n_train}, got shape {k_x.shape}")
    if model.centered:
        rows = (rows - rows.mean(axis=1, keepdims=True) - model.train_col_means[None, :]
                + model.train_grand_mean)
    z = rows @ model.eig.eigenvectors[:, :m] / np.sqrt(model.eig.eigenvalues[:m])
    return z[0] if vector else z


def kernel_approx_distance(model: KpcaModel, m: int, p) -> float:
    """Normalised Frobenius distance between the rank-m reconstruction and ``p``."""
    return frob_distance(approx_kernel(model, m), p)


@dataclass(frozen=True)
class PreimageModel:
    ridge_weights: np.ndarray  # (n, d)
    sigma: float
    ridge_lambda: float
    anchors: np.ndarray  # (n, m) projected training features


def fit_preimage(z_train, x_train, ridge_lambda: float = 0.5, sigma: float | None = None) -> PreimageModel:
    """Kernel ridge regression from projected features back to input space.

    Solves ``(K_rbf + ridge_lambda I) W = X_train``. ``sigma`` defaults to the
    median pairwise distance between the projected training features.
    """
    z = as_matrix(z_train, "Z_train")
    x = as_matrix(x_train, "X_train")
    if z.shape[0] != x.shape[0]:
        raise DimensionError(f"{z.shape[0]} feature rows vs {x.shape[0]} input rows")
    if not ridge_lambda > 0:
        raise ParameterError("ridge_lambda must be positive")
    if sigma is None:
        sigma = median_distance_sigma(z)
    if not sigma > 0:
        raise ParameterError("sigma must be positive")
    k = rbf_kernel(z, z, sigma)
    k[np.diag_indices_from(k)] += ridge_lambda
    w = solve_spd(k, x)
    return PreimageModel(w, float(sigma), float(ridge_lambda), z.copy())


def preimage(model: PreimageModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    vector = z.ndim == 1
    rows = as_matrix(z[None, :] if vector else z, "z")
    if rows.shape[1] != model.anchors.shape[1]:
        raise DimensionError(f"expected {model.anchors.shape[1]} features, got {rows.shape[1]}")
    out = rbf_kernel(rows, model.anchors, model.sigma) @ model.ridge_weights
    return out[0] if vector else out
