"""Experiment pipelines on in-memory data.

These functions hold the logic of each experiment with no file handling,
so the command line front end and the acceptance tests run the same code.
"""

from __future__ import annotations

import itertools

import numpy as np

from .autoencoder import TrainConfig, decode, encode, fit
from .data import DatasetSplits, LabeledDataset
from .evaluation import (C_GRID, accuracy, add_noise, embed_2d, interpolate_walk, kmeans, knn1_classify,
                         nystrom_rbf_features, svm_train, table1_report)
from .kernel import KernelMatrix, frob_distance, ideal_kernel
from .kpca import fit_kpca, fit_preimage, kernel_approx_distance, nystrom_project, preimage, project_train
from .linalg import pca_fit, pca_project, pca_reconstruct
from .pck import PckEnsemble, fit_pck, pck_kernel


def fit_prior(x, Q: int, G: int, subset_size: int, seed: int, n_jobs: int = 1):
    """PCK ensemble on a seeded subset plus the prior kernel over all rows of ``x``."""
    ens = fit_pck(x, Q, G, subset_size, seed, n_jobs=n_jobs)
    return ens, KernelMatrix(pck_kernel(ens, x), "pck")


def train_model(x, layer_dims, prior, config: TrainConfig):
    """Pretrain and fine-tune; ``prior=None`` takes the plain autoencoder path."""
    return fit(x, layer_dims, prior, config)


def code_kernel(params, x) -> np.ndarray:
    h = encode(params, x)
    return h @ h.T


def holdout_losses(params, x, p) -> dict:
    """Per-entry reconstruction MSE and the code-kernel distance to ``p`` on a held-out set."""
    h = encode(params, x)
    rec = decode(params, h)
    return {"reconstruction": float(np.mean((rec - x) ** 2)), "alignment": frob_distance(h @ h.T, p)}


def approx_curve(ens: PckEnsemble, p_train, train_x, test_x, params, components) -> dict:
    """Rank-m kPCA approximation of the prior against the single dkAE code kernel.

    kPCA is evaluated in-sample on the training kernel and out-of-sample
    through Nystrom projections of the test points; the dkAE is evaluated on
    the same two sets. Component counts beyond the usable rank are skipped.
    """
    model = fit_kpca(p_train)
    p_test = pck_kernel(ens, test_x)
    k_test_train = pck_kernel(ens, test_x, train_x)
    rows = []
    for m in components:
        if m > model.usable_rank:
            continue
        z = nystrom_project(model, m, k_test_train)
        rows.append({"m": int(m), "kpca_train": kernel_approx_distance(model, m, p_train),
                     "kpca_test": frob_distance(z @ z.T, p_test)})
    return {"rows": rows, "usable_rank": model.usable_rank,
            "dkae_train": frob_distance(code_kernel(params, train_x), p_train),
            "dkae_test": frob_distance(code_kernel(params, test_x), p_test)}


def table1(ens: PckEnsemble, dkae_params, ae_params, test: LabeledDataset) -> dict:
    """Distances to the ideal kernel on the test split for the prior, plain-AE and dkAE kernels."""
    return table1_report(code_kernel(dkae_params, test.features), pck_kernel(ens, test.features),
                         code_kernel(ae_params, test.features), test.labels)


def _encoded(params, ds: LabeledDataset) -> LabeledDataset:
    return LabeledDataset(encode(params, ds.features), ds.labels, ds.split)


def classification(splits: DatasetSplits, models: dict, C_grid=C_GRID, seed: int = 0,
                   ksvm_landmarks: int = 300, svm_epochs: int = 500) -> dict:
    """Linear SVM accuracy in input space, on an RBF Nystrom feature map and in each model's code space.

    The kernel SVM row is an approximation: a linear SVM on explicit Nystrom
    features of an RBF kernel whose width is the median landmark distance.
    """
    def run(tr, va, te):
        model = svm_train(tr, C_grid, va, seed, epochs=svm_epochs)
        return {"C": model.C, "val_accuracy": model.validation_accuracy, "test_accuracy": accuracy(model, te)}

    out = {"SVM": run(splits.train, splits.val, splits.test)}
    fmap = nystrom_rbf_features(splits.train.features, ksvm_landmarks, seed=seed)
    mapped = [LabeledDataset(fmap.transform(d.features), d.labels, d.split) for d in (splits.train, splits.val, splits.test)]
    out["kSVM"] = run(*mapped) | {"sigma": fmap.sigma, "landmarks": int(fmap.landmarks.shape[0])}
    for name, params in models.items():
        out[name] = run(*(_encoded(params, d) for d in (splits.train, splits.val, splits.test)))
    return out


def viz2d(splits: DatasetSplits, models: dict) -> dict:
    """2-D PCA embedding of each model's codes and 1-NN accuracy on the test embedding."""
    out = {}
    for name, params in models.items():
        tr2, te2 = embed_2d(encode(params, splits.train.features), encode(params, splits.test.features))
        _, acc = knn1_classify(LabeledDataset(tr2, splits.train.labels), te2, splits.test.labels)
        out[name] = {"train": tr2, "test": te2, "knn_accuracy": acc}
    return out


def denoise(ens: PckEnsemble, p_train, splits: DatasetSplits, params, classes=(5, 6), noise: str = "gaussian",
            level: float = 0.25, components: int = 32, ridge_lambda: float = 0.5, seed: int = 0) -> dict:
    """Denoise held-out images of ``classes`` with kPCA + pre-image and with dkAE + code-space PCA.

    Both reductions are fitted on the training rows of ``classes``: kPCA on
    the matching block of the prior, the pre-image regression on those
    inputs, and the code-space PCA on their codes.
    """
    p = p_train.values if isinstance(p_train, KernelMatrix) else np.asarray(p_train)
    idx = np.flatnonzero(np.isin(splits.train.labels, list(classes)))
    train = splits.train.subset(idx)
    test = splits.test.with_classes(classes)
    clean = test.features
    noisy = add_noise(clean, noise, level, seed)

    model = fit_kpca(p[np.ix_(idx, idx)])
    pre = fit_preimage(project_train(model, components), train.features, ridge_lambda)
    kpca_out = preimage(pre, nystrom_project(model, components, pck_kernel(ens, noisy, train.features)))

    pca = pca_fit(encode(params, train.features), components)
    dkae_out = decode(params, pca_reconstruct(pca, pca_project(pca, encode(params, noisy))))

    def mse(a):
        return np.mean((a - clean) ** 2, axis=1)

    return {"labels": test.labels, "clean": clean, "noisy": noisy, "kpca": kpca_out, "dkae": dkae_out,
            "mse_noisy": mse(noisy), "mse_kpca": mse(kpca_out), "mse_dkae": mse(dkae_out),
            "sigma": pre.sigma, "n_train": int(idx.size)}


def walk(params, x, n_clusters: int, pairs: int, steps: int, seed: int = 0) -> dict:
    """k-means in code space, then decoded straight-line walks between random centroid pairs."""
    codes = encode(params, x)
    km = kmeans(codes, n_clusters, seed)
    combos = list(itertools.combinations(range(n_clusters), 2))
    rng = np.random.default_rng(seed)
    chosen = [combos[i] for i in rng.choice(len(combos), size=min(pairs, len(combos)), replace=False)]
    frames = [decode(params, interpolate_walk(km.centroids[a], km.centroids[b], steps)) for a, b in chosen]
    return {"pairs": chosen, "frames": frames, "centroids": km.centroids, "inertia": km.inertia,
            "iterations": km.iterations}


def supervised_prior(labels) -> KernelMatrix:
    return ideal_kernel(labels)
