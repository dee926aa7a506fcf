"""Command line front end.

Usage: ``dkae <command> --config <path> [--force] [--seed N] [--out DIR]``.

Intermediate stages (ingested splits, the PCK prior, trained models) are
cached under ``<out>/cache`` in directories named by a hash of the config
fields they depend on, so commands sharing a stage reuse it. Each command
writes its artifacts and a ``manifest.json`` to ``<out>/<command>``; a
rerun with an existing complete manifest for the same config is a no-op
unless ``--force`` is given. Stage and command directories are guarded by
file locks.

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import shutil
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import __version__, experiments
from .autoencoder import TrainHistory, load_params, save_params, sub_seed
from .config import ExperimentConfig, load_config
from .data import DatasetSplits, ingest_csv, ingest_idx, ingest_synthetic, write_pgm
from .errors import ConfigError, DkaeError, ParseError
from .kernel import KernelMatrix, ideal_kernel
from .linalg import sym_eig
from .pck import load_ensemble, save_ensemble

log = logging.getLogger("dkae")

COMMANDS = ("fit-pck", "train", "sweep-lambda", "sweep-codesize", "table1", "approx-curve",
            "classify", "viz2d", "denoise", "walk")
PLOT_MAX_KERNEL = 600


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(f"cannot serialise {type(v).__name__}")


def versions() -> dict:
    import filelock
    import matplotlib
    import scipy
    return {"dkae": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__, "filelock": filelock.__version__}


class Session:
    """One command invocation: config, output root and the lazily built stages."""

    def __init__(self, cfg: ExperimentConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.root = cfg.resolve(cfg.out)
        self.seeds = cfg.seeds()
        self.stages = {}
        self._splits = None
        self._prior = None
        self._models = {}
        self.model_dirs = {}
        self.last_stage_dir = None

    # cached stages -----------------------------------------------------

    def _stage(self, kind: str, key: str, build, load):
        directory = self.root / "cache" / f"{kind}-{key}"
        directory.parent.mkdir(parents=True, exist_ok=True)
        with FileLock(str(directory) + ".lock"):
            marker = directory / "stage.json"
            if not marker.exists():
                log.info("building %s stage %s", kind, key)
                if directory.exists():
                    shutil.rmtree(directory)
                tmp = directory.with_name(directory.name + ".partial")
                if tmp.exists():
                    shutil.rmtree(tmp)
                tmp.mkdir()
                build(tmp)
                _write_json(tmp / "stage.json", {"kind": kind, "key": key})
                tmp.rename(directory)
            else:
                log.info("reusing %s stage %s", kind, key)
        self.stages[f"{kind}-{key}"] = str(directory.relative_to(self.root))
        self.last_stage_dir = directory
        return load(directory)

    def splits(self) -> DatasetSplits:
        if self._splits is None:
            self._splits = self._stage("data", self.cfg.digest("data", "seed"), self._build_splits, DatasetSplits.load)
        return self._splits

    def _build_splits(self, directory: Path) -> None:
        d, cfg = self.cfg.data, self.cfg
        seed = self.seeds["split"]
        if d.source == "idx":
            splits = ingest_idx(cfg.resolve(d.images), cfg.resolve(d.labels), d.n_samples, seed, d.fractions)
        elif d.source == "csv":
            col = int(d.label_column) if d.label_column.lstrip("-").isdigit() else d.label_column
            splits = ingest_csv(cfg.resolve(d.csv), col, d.n_samples, seed, d.fractions)
        else:
            splits = ingest_synthetic(d.n_samples, d.classes, d.dim, seed, d.fractions)
        splits.save(directory)

    def prior(self):
        """``(ensemble, training prior kernel)``."""
        if self._prior is None:
            splits = self.splits()
            key = self.cfg.digest("data", "pck", "seed")

            def build(directory):
                p = self.cfg.pck
                ens, kernel = experiments.fit_prior(splits.train.features, p.Q, p.G, p.subset_size,
                                                    self.seeds["pck"], p.n_jobs)
                save_ensemble(ens, directory / "ensemble")
                kernel.save(directory / "prior_train.dkmat")

            self._prior = self._stage("pck", key, build, lambda d: (load_ensemble(d / "ensemble"),
                                                                    KernelMatrix.load(d / "prior_train.dkmat")))
        return self._prior

    def model(self, prior_kind: str = "pck", lam: float | None = None, code_size: int | None = None):
        """Trained parameters; ``prior_kind`` is ``pck``, ``ideal`` or ``none`` (plain autoencoder)."""
        lam = self.cfg.train.lam if lam is None else float(lam)
        if prior_kind == "none":
            lam = 0.0
        code_size = self.cfg.model.code_size if code_size is None else int(code_size)
        tag = (prior_kind, lam, code_size)
        if tag in self._models:
            return self._models[tag]
        splits = self.splits()
        sections = ("data", "model", "train", "seed") + (("pck",) if prior_kind == "pck" else ())
        key = hashlib.sha256(f"{self.cfg.digest(*sections)}|{prior_kind}|{lam!r}|{code_size}".encode()).hexdigest()[:16]

        def build(directory):
            if prior_kind == "pck":
                prior = self.prior()[1]
            elif prior_kind == "ideal":
                prior = ideal_kernel(splits.train.labels)
            else:
                prior = None
            config = self.cfg.train_config(lam)
            dims = self.cfg.layer_dims(splits.train.features.shape[1], code_size)
            log.info("training %s model: dims=%s lambda=%g", prior_kind, dims, lam)
            params, history = experiments.train_model(splits.train.features, dims, prior, config)
            save_params(params, directory / "params", config, len(history.epochs))
            _write_history(directory / "history.csv", history)

        params, _ = self._stage("model", key, build, lambda d: load_params(d / "params"))
        self._models[tag] = params
        self.model_dirs[tag] = self.last_stage_dir
        return params

    # outputs -----------------------------------------------------------

    def out_dir(self) -> Path:
        return self.root / self.command

    def copy_cached(self, src_relative: str, name: str) -> None:
        shutil.copyfile(self.root / src_relative, self.out_dir() / name)


def _write_history(path: Path, history: TrainHistory) -> None:
    _write_csv(path, ["epoch", "total", "reconstruction", "alignment"],
               [(i, e.total, e.reconstruction_term, e.alignment_term) for i, e in enumerate(history.epochs, start=1)])


def _read_history(path: Path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: float(v) for k, v in r.items()} for r in rows]


def _plots(s: Session):
    if not s.cfg.plots:
        return None
    from . import plotting
    return plotting


# commands --------------------------------------------------------------

def cmd_fit_pck(s: Session) -> dict:
    """Fit the PCK ensemble and report the training prior kernel."""
    ens, kernel = s.prior()
    out = s.out_dir()
    k = kernel.values
    eigs = sym_eig(k).eigenvalues
    kernel.save(out / "prior_train.dkmat")
    report = {"Q": ens.Q, "G": ens.G, "Z": ens.Z, "n_models": len(ens.models), "subset_size": ens.fit_subset_size,
              "n_train": kernel.n, "min_entry": float(k.min()), "max_entry": float(k.max()),
              "symmetric": bool(np.array_equal(k, k.T)), "min_eigenvalue": float(eigs[-1]),
              "max_eigenvalue": float(eigs[0]), "frobenius_norm": float(np.linalg.norm(k))}
    _write_json(out / "report.json", report)
    _write_csv(out / "eigenvalues.csv", ["index", "eigenvalue"], enumerate(eigs, start=1))
    plots = _plots(s)
    if plots:
        labels = s.splits().train.labels
        sel = np.arange(min(PLOT_MAX_KERNEL, kernel.n))
        plots.kernel_panels(out / "prior_kernel.png", {"PCK prior (train)": k[np.ix_(sel, sel)]}, labels[sel])
    return report


def cmd_train(s: Session) -> dict:
    """Train the dkAE on the PCK prior and report held-out losses."""
    splits = s.splits()
    ens, kernel = s.prior()
    params = s.model("pck")
    mdir = s.model_dirs[("pck", s.cfg.train.lam, s.cfg.model.code_size)]
    out = s.out_dir()
    shutil.copytree(mdir / "params", out / "params", dirs_exist_ok=True)
    shutil.copyfile(mdir / "history.csv", out / "history.csv")
    from .pck import pck_kernel
    report = {
        "train": experiments.holdout_losses(params, splits.train.features, kernel.values),
        "val": experiments.holdout_losses(params, splits.val.features, pck_kernel(ens, splits.val.features)),
        "test": experiments.holdout_losses(params, splits.test.features, pck_kernel(ens, splits.test.features)),
        "layer_dims": list(params.layer_dims), "lambda": s.cfg.train.lam,
    }
    _write_json(out / "report.json", report)
    plots = _plots(s)
    if plots:
        hist = _read_history(out / "history.csv")
        ep = [h["epoch"] for h in hist]
        plots.line_plot(out / "loss.png", ep, {"total": [h["total"] for h in hist],
                                               "reconstruction": [h["reconstruction"] for h in hist],
                                               "alignment": [h["alignment"] for h in hist]},
                        "fine-tuning epoch", "mean batch loss", "training losses")
    return report


def _sweep(s: Session, name: str, values, kw: str) -> dict:
    splits = s.splits()
    ens, _ = s.prior()
    from .pck import pck_kernel
    p_val = pck_kernel(ens, splits.val.features)
    rows = []
    for v in values:
        params = s.model("pck", **{kw: v})
        losses = experiments.holdout_losses(params, splits.val.features, p_val)
        rows.append((v, losses["reconstruction"], losses["alignment"]))
        log.info("%s=%s: val reconstruction %.5f, val alignment %.5f", name, v, rows[-1][1], rows[-1][2])
    out = s.out_dir()
    _write_csv(out / "curve.csv", [name, "val_reconstruction", "val_alignment"], rows)
    plots = _plots(s)
    if plots:
        xs = [r[0] for r in rows]
        plots.line_plot(out / "curve.png", xs, {"L_r (val)": [r[1] for r in rows], "L_c (val)": [r[2] for r in rows]},
                        name, "loss", f"validation losses over {name}", logx=(name == "code_size"))
    return {"rows": [dict(zip([name, "val_reconstruction", "val_alignment"], r)) for r in rows]}


def cmd_sweep_lambda(s: Session) -> dict:
    """Validation losses over a grid of lambda values."""
    return _sweep(s, "lambda", s.cfg.sweep.lambdas, "lam")


def cmd_sweep_codesize(s: Session) -> dict:
    """Validation losses over a grid of code sizes."""
    return _sweep(s, "code_size", s.cfg.sweep.code_sizes, "code_size")


def cmd_table1(s: Session) -> dict:
    """Distances of prior, plain AE and dkAE kernels to the ideal kernel."""
    splits = s.splits()
    ens, _ = s.prior()
    rep = experiments.table1(ens, s.model("pck"), s.model("none"), splits.test)
    names = list(rep["distance_to_ideal"])
    rows = [(r, rep["distance_to_ideal"][r], *(rep["improvement_percent"][r][c] for c in names)) for r in names]
    out = s.out_dir()
    _write_csv(out / "table1.csv", ["kernel", "distance_to_ideal", *(f"improvement_vs_{c}" for c in names)], rows)
    _write_json(out / "report.json", rep)
    plots = _plots(s)
    if plots:
        from .pck import pck_kernel
        te = splits.test
        sel = np.arange(min(PLOT_MAX_KERNEL, len(te)))
        x = te.features[sel]
        plots.kernel_panels(out / "kernels.png", {
            "P (PCK)": pck_kernel(ens, x), "K_AE": experiments.code_kernel(s.model("none"), x),
            "C (dkAE)": experiments.code_kernel(s.model("pck"), x), "K_I": ideal_kernel(te.labels[sel]).values,
        }, te.labels[sel])
    return rep


def cmd_approx_curve(s: Session) -> dict:
    """kPCA rank-m approximation of the prior against the dkAE code kernel."""
    splits = s.splits()
    ens, kernel = s.prior()
    rep = experiments.approx_curve(ens, kernel, splits.train.features, splits.test.features, s.model("pck"),
                                   s.cfg.approx.components)
    out = s.out_dir()
    _write_csv(out / "curve.csv", ["m", "kpca_train", "kpca_test", "dkae_train", "dkae_test"],
               [(r["m"], r["kpca_train"], r["kpca_test"], rep["dkae_train"], rep["dkae_test"]) for r in rep["rows"]])
    _write_json(out / "report.json", rep)
    plots = _plots(s)
    if plots and rep["rows"]:
        ms = [r["m"] for r in rep["rows"]]
        plots.line_plot(out / "curve.png", ms, {"kPCA (test, Nystrom)": [r["kpca_test"] for r in rep["rows"]],
                                                "kPCA (train)": [r["kpca_train"] for r in rep["rows"]]},
                        "components m", "L_c to prior", "kernel approximation", logx=True,
                        hlines={"dkAE (test)": rep["dkae_test"]})
    return rep


def cmd_classify(s: Session) -> dict:
    """Linear SVM accuracy in input space and code space."""
    splits = s.splits()
    s.prior()
    models = {"cSVM": s.model("pck"), "scSVM": s.model("ideal")}
    rep = experiments.classification(splits, models, s.cfg.eval.svm_C, s.seeds["svm"], s.cfg.eval.ksvm_landmarks,
                                     s.cfg.eval.svm_epochs)
    rep["kSVM"]["note"] = "linear SVM on Nystrom RBF features; stand-in for a kernel SVM"
    out = s.out_dir()
    _write_csv(out / "table2.csv", ["method", "C", "val_accuracy", "test_accuracy"],
               [(k, v["C"], v["val_accuracy"], v["test_accuracy"]) for k, v in rep.items()])
    _write_json(out / "report.json", rep)
    plots = _plots(s)
    if plots:
        plots.bar_plot(out / "accuracy.png", {k: v["test_accuracy"] for k, v in rep.items()}, "test accuracy",
                       "linear SVM accuracy")
    return rep


def cmd_viz2d(s: Session) -> dict:
    """2-D PCA embeddings of codes with 1-NN accuracy."""
    splits = s.splits()
    s.prior()
    res = experiments.viz2d(splits, {"dkae": s.model("pck"), "ae": s.model("none")})
    out = s.out_dir()
    for name, r in res.items():
        _write_csv(out / f"scatter_{name}.csv", ["x", "y", "label"],
                   [(a, b, int(c)) for (a, b), c in zip(r["test"], splits.test.labels)])
    _write_csv(out / "table3.csv", ["method", "knn1_accuracy"], [(k, r["knn_accuracy"]) for k, r in res.items()])
    rep = {k: {"knn1_accuracy": r["knn_accuracy"]} for k, r in res.items()}
    _write_json(out / "report.json", rep)
    plots = _plots(s)
    if plots:
        for name, r in res.items():
            plots.scatter_plot(out / f"scatter_{name}.png", r["test"], splits.test.labels,
                               f"{name} codes, PCA to 2-D (test)")
    return rep


def cmd_denoise(s: Session) -> dict:
    """Denoising by kPCA with pre-images against dkAE with code-space PCA."""
    splits = s.splits()
    ens, kernel = s.prior()
    dn = s.cfg.denoise
    res = experiments.denoise(ens, kernel, splits, s.model("pck"), dn.classes, dn.noise, dn.level, dn.components,
                              dn.ridge_lambda, s.seeds["noise"])
    out = s.out_dir()
    _write_csv(out / "per_image.csv", ["index", "label", "mse_noisy", "mse_kpca", "mse_dkae"],
               [(i, int(l), a, b, c) for i, (l, a, b, c) in
                enumerate(zip(res["labels"], res["mse_noisy"], res["mse_kpca"], res["mse_dkae"]))])
    rep = {"n_test": int(len(res["labels"])), "n_train": res["n_train"], "classes": list(dn.classes),
           "noise": dn.noise, "level": dn.level, "components": dn.components, "ridge_lambda": dn.ridge_lambda,
           "preimage_sigma": res["sigma"], "mse_noisy": float(np.mean(res["mse_noisy"])),
           "mse_kpca": float(np.mean(res["mse_kpca"])), "mse_dkae": float(np.mean(res["mse_dkae"]))}
    _write_json(out / "report.json", rep)
    shape = splits.train.image_shape
    n_img = min(dn.max_images, rep["n_test"])
    if shape is not None and n_img:
        img_dir = out / "images"
        img_dir.mkdir(exist_ok=True)
        for i in range(n_img):
            for kind in ("clean", "noisy", "kpca", "dkae"):
                write_pgm(img_dir / f"{i:03d}_{kind}.pgm", res[kind][i].reshape(shape))
        plots = _plots(s)
        if plots:
            plots.image_grid(out / "denoise.png", {k: res[k][:n_img] for k in ("clean", "noisy", "kpca", "dkae")},
                             shape)
    return rep


def cmd_walk(s: Session) -> dict:
    """Decoded interpolation walks between k-means centroids in code space."""
    splits = s.splits()
    s.prior()
    w = s.cfg.walk
    n_clusters = int(splits.train.classes.size)
    res = experiments.walk(s.model("pck"), splits.train.features, n_clusters, w.pairs, w.steps, s.seeds["walk"])
    out = s.out_dir()
    rows = []
    shape = splits.train.image_shape
    if shape is not None:
        (out / "frames").mkdir(exist_ok=True)
    ts = np.linspace(0.0, 1.0, w.steps)
    for p, ((a, b), frames) in enumerate(zip(res["pairs"], res["frames"])):
        for step, t in enumerate(ts):
            rows.append((p, step, t, a, b))
            if shape is not None:
                write_pgm(out / "frames" / f"pair{p}_step{step:02d}.pgm", frames[step].reshape(shape))
    _write_csv(out / "walk.csv", ["pair", "step", "t", "centroid_a", "centroid_b"], rows)
    rep = {"clusters": n_clusters, "pairs": [list(map(int, pr)) for pr in res["pairs"]], "steps": w.steps,
           "kmeans_inertia": res["inertia"], "kmeans_iterations": res["iterations"]}
    _write_json(out / "report.json", rep)
    plots = _plots(s)
    if plots and shape is not None:
        plots.image_grid(out / "walk.png", {f"pair {p}": f for p, f in enumerate(res["frames"])}, shape)
    return rep


HANDLERS = {
    "fit-pck": cmd_fit_pck, "train": cmd_train, "sweep-lambda": cmd_sweep_lambda,
    "sweep-codesize": cmd_sweep_codesize, "table1": cmd_table1, "approx-curve": cmd_approx_curve,
    "classify": cmd_classify, "viz2d": cmd_viz2d, "denoise": cmd_denoise, "walk": cmd_walk,
}


def run(command: str, cfg: ExperimentConfig, force: bool = False, config_path: str | None = None) -> dict:
    """Run one command; returns its manifest. Raises :class:`DkaeError` subclasses or ``OSError``."""
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}")
    s = Session(cfg, command)
    out = s.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    digest = cfg.digest()
    with FileLock(str(out) + ".lock"):
        if manifest_path.exists() and not force:
            try:
                prev = json.loads(manifest_path.read_text())
            except json.JSONDecodeError:
                prev = {}
            if prev.get("status") == "complete" and prev.get("config_digest") == digest:
                log.info("%s: up to date (use --force to rerun)", command)
                return prev
        for child in out.iterdir():
            shutil.rmtree(child) if child.is_dir() else child.unlink()
        started = datetime.now(timezone.utc).isoformat(timespec="seconds")
        t0 = time.perf_counter()
        summary = HANDLERS[command](s)
        outputs = {str(p.relative_to(out)): _sha256(p) for p in sorted(out.rglob("*")) if p.is_file()}
        train_seed = s.seeds["train"]
        manifest = {
            "command": command, "status": "complete", "config_digest": digest, "config": cfg.to_dict(),
            "config_path": None if config_path is None else str(Path(config_path).resolve()),
            "seeds": {"master": cfg.seed, **s.seeds,
                      "train_derived": {n: sub_seed(train_seed, n) for n in ("init", "pretrain-batches",
                                                                            "finetune-batches")}},
            "inputs": _inputs(cfg) | {"stages": s.stages},
            "outputs": outputs, "versions": versions(), "started": started,
            "wall_time_s": round(time.perf_counter() - t0, 3), "summary": summary,
        }
        _write_json(manifest_path, manifest)
    log.info("%s: wrote %d artifacts to %s", command, len(outputs), out)
    return manifest


def _inputs(cfg: ExperimentConfig) -> dict:
    d = cfg.data
    files = {"idx": (d.images, d.labels), "csv": (d.csv,)}.get(d.source, ())
    return {"source": d.source, "files": {str(cfg.resolve(f)): _sha256(cfg.resolve(f)) for f in files}}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dkae", description="Deep kernelized autoencoder experiments.")
    parser.add_argument("--version", action="version", version=f"dkae {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__doc__ or name)
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--force", action="store_true", help="rerun even if a complete manifest exists")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s",
                        stream=sys.stderr)
    try:
        out = None if args.out is None else str(Path(args.out).resolve())
        cfg = load_config(args.config, seed=args.seed, out=out)
    except FileNotFoundError as exc:
        print(f"dkae: config error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"dkae: config error: {exc}", file=sys.stderr)
        return 2
    try:
        run(args.command, cfg, args.force, args.config)
    except ParseError as exc:
        print(f"dkae: I/O error: {exc}", file=sys.stderr)
        return 4
    except DkaeError as exc:
        print(f"dkae: {type(exc).__name__} during {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dkae: I/O error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
