"""Probabilistic cluster kernel built from a grid of GMM fits.

For restarts ``q = 1..Q`` and component counts ``g = 2..G`` a diagonal GMM
is fitted on a seeded subset of the data. The kernel between two points is
the average over the grid of the inner products of their posterior vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .errors import DimensionError, ParameterError
from .gmm import GmmModel, fit_gmm, posteriors
from .linalg import as_matrix


def cell_seed(seed: int, q: int, g: int) -> int:
    """Seed for grid cell (q, g); reproducible without fitting the rest of the grid."""
    return int(np.random.SeedSequence([seed, q, g]).generate_state(1)[0])


@dataclass
class PckEnsemble:
    models: dict  # (q, g) -> GmmModel
    Q: int
    G: int
    seed: int
    subset_indices: np.ndarray

    @property
    def fit_subset_size(self) -> int:
        return int(self.subset_indices.shape[0])

    @property
    def Z(self) -> float:
        return float(self.Q * (self.G - 1))

    @property
    def d(self) -> int:
        return next(iter(self.models.values())).d

    def cells(self):
        return [(q, g) for q in range(1, self.Q + 1) for g in range(2, self.G + 1)]


def fit_pck(x, Q: int, G: int, subset_size: int, seed: int, n_jobs: int = 1) -> PckEnsemble:
    x = as_matrix(x, "X")
    n = x.shape[0]
    if G < 2 or Q < 1:
        raise ParameterError(f"need Q >= 1 and G >= 2, got Q={Q}, G={G}")
    if not 1 <= subset_size <= n:
        raise ParameterError(f"subset_size={subset_size} must be in [1, n={n}]")
    if subset_size < G:
        raise ParameterError(f"subset_size={subset_size} smaller than G={G}")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    subset = np.sort(rng.choice(n, size=subset_size, replace=False))
    xs = x[subset]
    cells = [(q, g) for q in range(1, Q + 1) for g in range(2, G + 1)]

    def fit_cell(q, g):
        model, _ = fit_gmm(xs, g, cell_seed(seed, q, g))
        return model

    if n_jobs == 1:
        fitted = [fit_cell(q, g) for q, g in cells]
    else:
        fitted = Parallel(n_jobs=n_jobs)(delayed(fit_cell)(q, g) for q, g in cells)
    return PckEnsemble(dict(zip(cells, fitted)), Q, G, seed, subset)


def pck_features(ens: PckEnsemble, x) -> np.ndarray:
    """Concatenated posterior vectors over the grid, shape (n, sum of g)."""
    x = as_matrix(x, "X")
    if x.shape[1] != ens.d:
        raise DimensionError(f"ensemble trained on d={ens.d}, got {x.shape[1]} columns")
    return np.hstack([posteriors(ens.models[c], x) for c in ens.cells()])


def pck_kernel(ens: PckEnsemble, x, y=None) -> np.ndarray:
    """Kernel matrix between the rows of ``x`` and ``y`` (``y=None`` for the self-kernel)."""
    fx = pck_features(ens, x)
    fy = fx if y is None else pck_features(ens, y)
    k = fx @ fy.T / ens.Z
    if y is None:
        k = 0.5 * (k + k.T)
    return np.clip(k, 0.0, 1.0)


def save_ensemble(ens: PckEnsemble, directory) -> None:
    directory = Path(directory)
    (directory / "models").mkdir(parents=True, exist_ok=True)
    for (q, g), model in ens.models.items():
        model.save(directory / "models" / f"q{q:03d}_g{g:03d}.json")
    manifest = {
        "Q": ens.Q,
        "G": ens.G,
        "Z": ens.Z,
        "seed": ens.seed,
        "subset_indices": ens.subset_indices.tolist(),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_ensemble(directory) -> PckEnsemble:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    Q, G = manifest["Q"], manifest["G"]
    models = {}
    for q in range(1, Q + 1):
        for g in range(2, G + 1):
            models[(q, g)] = GmmModel.load(directory / "models" / f"q{q:03d}_g{g:03d}.json")
    return PckEnsemble(models, Q, G, manifest["seed"], np.asarray(manifest["subset_indices"], dtype=np.int64))
