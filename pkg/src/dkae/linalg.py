"""Dense linear algebra substrate.

Matrices are plain 2-D ``float64`` numpy arrays in C (row-major) order.
The helpers here add the checks and conventions the rest of the package
relies on: sorted eigenpairs with a fixed sign convention, an SPD solver
that fails loudly, covariance-based PCA and the DKMAT1 binary format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import DimensionError, NotPositiveDefiniteError, ParameterError, ParseError, SymmetryError

SYMMETRY_RTOL = 1e-10
DKMAT_MAGIC = b"DKMAT1"
_HEADER = struct.Struct("<6sQQ")


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float64 array (copying only if needed)."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ParameterError(f"{name} contains NaN or Inf")
    return m


def check_symmetric(m: np.ndarray, rtol: float = SYMMETRY_RTOL, name: str = "matrix") -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {m.shape}")
    scale = np.max(np.abs(m)) if m.size else 0.0
    if scale > 0 and np.max(np.abs(m - m.T)) > rtol * scale:
        raise SymmetryError(f"{name} is not symmetric within relative tolerance {rtol:g}")


@dataclass(frozen=True)
class EigResult:
    """Eigenpairs sorted by descending eigenvalue; column j of ``eigenvectors`` pairs with ``eigenvalues[j]``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # first component with non-negligible magnitude is made positive
    idx = np.argmax(np.abs(vecs) > 1e-12, axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _jacobi_eig(m: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    a = m.copy()
    n = a.shape[0]
    v = np.eye(n)
    target = tol * np.linalg.norm(m)
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v


def sym_eig(m, method: str = "lapack") -> EigResult:
    """Eigendecomposition of a symmetric matrix.

    ``method="jacobi"`` runs cyclic Jacobi rotations until the off-diagonal
    Frobenius mass drops below ``1e-12 * ||M||_F``; it is exact but slow and
    intended for small matrices and cross-checks. The default delegates to
    LAPACK's symmetric driver.
    """
    m = as_matrix(m)
    check_symmetric(m)
    if method == "jacobi":
        vals, vecs = _jacobi_eig(m)
    elif method == "lapack":
        vals, vecs = np.linalg.eigh(m)
    else:
        raise ParameterError(f"unknown eigensolver {method!r}")
    order = np.argsort(vals, kind="stable")[::-1]
    return EigResult(vals[order].copy(), _fix_signs(vecs[:, order]))


def solve_spd(a, b) -> np.ndarray:
    """Solve ``A X = B`` for symmetric positive definite ``A`` via Cholesky."""
    a = as_matrix(a, "A")
    b_arr = np.asarray(b, dtype=np.float64)
    vector = b_arr.ndim == 1
    b2 = b_arr.reshape(-1, 1) if vector else as_matrix(b_arr, "B")
    check_symmetric(a, name="A")
    if b2.shape[0] != a.shape[0]:
        raise DimensionError(f"A is {a.shape}, B has {b2.shape[0]} rows")
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    x = scipy.linalg.cho_solve(factor, b2, check_finite=False)
    return x.ravel() if vector else x


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # d x m, orthonormal columns
    explained_variance: np.ndarray


def pca_fit(x, m: int) -> PcaModel:
    """Fit PCA from the eigendecomposition of the (1/n) sample covariance."""
    x = as_matrix(x, "X")
    n, d = x.shape
    if not 1 <= m <= min(n, d):
        raise ParameterError(f"m={m} outside [1, {min(n, d)}]")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / n
    cov = 0.5 * (cov + cov.T)
    eig = sym_eig(cov)
    var = np.clip(eig.eigenvalues[:m], 0.0, None)
    return PcaModel(mean, np.ascontiguousarray(eig.eigenvectors[:, :m]), var)


def pca_project(model: PcaModel, x) -> np.ndarray:
    x = as_matrix(x, "X")
    if x.shape[1] != model.mean.shape[0]:
        raise DimensionError(f"expected {model.mean.shape[0]} columns, got {x.shape[1]}")
    return (x - model.mean) @ model.components


def pca_reconstruct(model: PcaModel, z) -> np.ndarray:
    z = as_matrix(z, "Z")
    if z.shape[1] != model.components.shape[1]:
        raise DimensionError(f"expected {model.components.shape[1]} columns, got {z.shape[1]}")
    return z @ model.components.T + model.mean


def save_matrix(path, m) -> None:
    """Write ``m`` as DKMAT1: magic, rows/cols as u64 LE, then f64 LE values row by row."""
    m = as_matrix(m)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DKMAT_MAGIC, m.shape[0], m.shape[1]))
        fh.write(m.astype("<f8", copy=False).tobytes(order="C"))


def load_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ParseError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, rows, cols = _HEADER.unpack_from(raw)
    if magic != DKMAT_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r} at byte offset 0")
    expected = _HEADER.size + 8 * rows * cols
    if len(raw) != expected:
        raise ParseError(f"{path}: expected {expected} bytes for {rows}x{cols}, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    return data.astype(np.float64).reshape(rows, cols)
