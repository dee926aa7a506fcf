"""Diagonal-covariance Gaussian mixture models fitted by EM."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionError, InsufficientDataError, ParameterError
from .linalg import as_matrix

VAR_FLOOR = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)
# elements per chunk when materialising (rows, components, dims) residuals
_CHUNK_ELEMS = 4_000_000


@dataclass
class GmmModel:
    weights: np.ndarray  # (g,)
    means: np.ndarray  # (g, d)
    variances: np.ndarray  # (g, d)
    seed: int | None = None

    @property
    def g(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "g": self.g,
            "d": self.d,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GmmModel":
        model = cls(
            np.asarray(doc["weights"], dtype=np.float64),
            np.asarray(doc["means"], dtype=np.float64).reshape(doc["g"], doc["d"]),
            np.asarray(doc["variances"], dtype=np.float64).reshape(doc["g"], doc["d"]),
            doc.get("seed"),
        )
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "GmmModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class FitTrace:
    log_likelihoods: list = field(default_factory=list)
    converged: bool = False
    rescues: int = 0


def log_joint(model: GmmModel, x: np.ndarray) -> np.ndarray:
    """Per-point, per-component ``log w_k + log N(x | mu_k, diag var_k)``, shape (n, g)."""
    x = as_matrix(x, "X")
    if x.shape[1] != model.d:
        raise DimensionError(f"model has d={model.d}, data has {x.shape[1]} columns")
    inv_var = 1.0 / model.variances
    const = np.log(model.weights) - 0.5 * (model.d * _LOG_2PI + np.sum(np.log(model.variances), axis=1))
    out = np.empty((x.shape[0], model.g))
    step = max(1, _CHUNK_ELEMS // max(1, model.g * model.d))
    # direct residuals instead of the expanded quadratic: the expansion loses
    # too many digits once variances sit at the floor
    for start in range(0, x.shape[0], step):
        diff = x[start:start + step, None, :] - model.means[None, :, :]
        out[start:start + step] = const - 0.5 * np.einsum("ngd,gd->ng", diff * diff, inv_var)
    return out


def normalize_log_probs(logp: np.ndarray) -> np.ndarray:
    """Row-wise softmax of log-probabilities via log-sum-exp."""
    logp = np.asarray(logp, dtype=np.float64)
    return np.exp(logp - logsumexp(logp, axis=-1, keepdims=True))


def posteriors(model: GmmModel, x) -> np.ndarray:
    return normalize_log_probs(log_joint(model, x))


def posterior(model: GmmModel, x) -> np.ndarray:
    """Component membership probabilities for a single d-vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.d:
        raise DimensionError(f"expected a vector of length {model.d}, got shape {x.shape}")
    return posteriors(model, x[None, :])[0]


def _m_step(x, resp, old: GmmModel, var_floor):
    n = x.shape[0]
    mass = resp.sum(axis=0)
    empty = mass < 1e-8 * n
    safe = np.where(empty, 1.0, mass)
    means = resp.T @ x / safe[:, None]
    variances = np.empty_like(means)
    for k in range(old.g):
        diff = x - means[k]
        variances[k] = np.maximum(resp[:, k] @ (diff * diff) / safe[k], var_floor)
    # near-empty components keep their previous parameters (a partial M-step,
    # which still cannot lower the likelihood)
    means[empty] = old.means[empty]
    variances[empty] = old.variances[empty]
    weights = np.maximum(mass, 1e-300)
    weights = weights / weights.sum()
    return GmmModel(weights, means, variances, old.seed), empty


def _loglik(model, x):
    lj = log_joint(model, x)
    per_point = logsumexp(lj, axis=1)
    return math.fsum(per_point), lj, per_point


def fit_gmm(x, g: int, seed: int, max_iter: int = 100, tol: float = 1e-6,
            var_floor: float = VAR_FLOOR) -> tuple[GmmModel, FitTrace]:
    """Fit a ``g``-component diagonal GMM with EM.

    Means start at ``g`` distinct data points drawn with ``seed``; variances
    start at the global per-dimension variance and weights are uniform.
    Iterates until the relative log-likelihood change drops below ``tol`` or
    ``max_iter`` M-steps have run.
    """
    x = as_matrix(x, "X")
    n, d = x.shape
    if g < 1:
        raise ParameterError(f"g must be >= 1, got {g}")
    if n < g:
        raise InsufficientDataError(f"need at least g={g} samples, got {n}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=g, replace=False)
    global_var = np.maximum(x.var(axis=0), var_floor)
    model = GmmModel(np.full(g, 1.0 / g), x[idx].copy(), np.tile(global_var, (g, 1)), seed)

    trace = FitTrace()
    ll, lj, per_point = _loglik(model, x)
    trace.log_likelihoods.append(ll)
    for _ in range(max_iter):
        resp = np.exp(lj - per_point[:, None])
        new_model, empty = _m_step(x, resp, model, var_floor)
        new_ll, new_lj, new_pp = _loglik(new_model, x)
        if empty.any():
            rescued = GmmModel(new_model.weights.copy(), new_model.means.copy(),
                               new_model.variances.copy(), seed)
            worst = int(np.argmin(new_pp))
            for k in np.flatnonzero(empty):
                rescued.means[k] = x[worst]
                rescued.variances[k] = global_var
            r_ll, r_lj, r_pp = _loglik(rescued, x)
            if r_ll >= new_ll:
                new_model, new_ll, new_lj, new_pp = rescued, r_ll, r_lj, r_pp
                trace.rescues += 1
        model, lj, per_point = new_model, new_lj, new_pp
        trace.log_likelihoods.append(new_ll)
        change = abs(new_ll - ll)
        ll = new_ll
        if change <= tol * max(abs(trace.log_likelihoods[-2]), 1e-300):
            trace.converged = True
            break
    return model, trace
