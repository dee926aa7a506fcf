"""Experiment configuration read from INI files.

Every key has a default and the defaults follow the full-scale MNIST
protocol (20000 samples, Q=G=30 on 200 samples, d-500-500-2000-2000,
k=200, 30 pretraining and 100 fine-tuning epochs, lambda=0.1). Unknown
sections or keys are rejected so typos do not silently fall back to a
default.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .autoencoder import TrainConfig, sub_seed
from .errors import ConfigError, DkaeError

# "train" fans out further inside the trainer (init, pretrain-batches, finetune-batches)
SEED_NAMES = ("split", "pck", "train", "noise", "svm", "walk")


def _floats(text):
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


def _optional_int(text):
    text = text.strip()
    return None if text.lower() in ("", "none", "auto") else int(text)


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class DataSection:
    source: str = "synthetic"  # synthetic | idx | csv
    images: str = ""
    labels: str = ""
    csv: str = ""
    label_column: str = "-1"
    n_samples: int = 20000
    classes: int = 10
    dim: int = 784
    fractions: tuple = (0.7, 0.15, 0.15)


@dataclass
class PckSection:
    Q: int = 30
    G: int = 30
    subset_size: int = 200
    n_jobs: int = 1


@dataclass
class ModelSection:
    hidden: tuple = (500, 500, 2000)
    code_size: int = 2000


@dataclass
class TrainSection:
    lam: float = 0.1
    batch_size: int = 200
    pretrain_epochs: int = 30
    finetune_epochs: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epoch_batches: int | None = None


@dataclass
class SweepSection:
    lambdas: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    code_sizes: tuple = (10, 50, 100, 500, 1000, 2000)


@dataclass
class ApproxSection:
    components: tuple = (1, 2, 4, 8, 10, 16, 32, 64, 128)


@dataclass
class EvalSection:
    svm_C: tuple = (0.01, 0.1, 1.0, 10.0, 100.0)
    svm_epochs: int = 500
    ksvm_landmarks: int = 300


@dataclass
class DenoiseSection:
    classes: tuple = (5, 6)
    noise: str = "gaussian"
    level: float = 0.25
    components: int = 32
    ridge_lambda: float = 0.5
    max_images: int = 10


@dataclass
class WalkSection:
    pairs: int = 3
    steps: int = 10


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs"
    plots: bool = True
    data: DataSection = field(default_factory=DataSection)
    pck: PckSection = field(default_factory=PckSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    approx: ApproxSection = field(default_factory=ApproxSection)
    eval: EvalSection = field(default_factory=EvalSection)
    denoise: DenoiseSection = field(default_factory=DenoiseSection)
    walk: WalkSection = field(default_factory=WalkSection)
    base_dir: str = "."  # directory relative paths are resolved against

    def seeds(self) -> dict:
        """Named sub-seeds fanned out from the master seed."""
        return {name: sub_seed(self.seed, name) for name in SEED_NAMES}

    def layer_dims(self, input_dim: int, code_size: int | None = None) -> tuple:
        return (int(input_dim), *self.model.hidden, int(self.model.code_size if code_size is None else code_size))

    def train_config(self, lam: float | None = None) -> TrainConfig:
        t = self.train
        return TrainConfig(
            lam=t.lam if lam is None else lam, batch_size=t.batch_size,
            pretrain_epochs=t.pretrain_epochs, finetune_epochs=t.finetune_epochs,
            learning_rate=t.learning_rate, beta1=t.beta1, beta2=t.beta2, epsilon=t.epsilon,
            seed=self.seeds()["train"], epoch_batches=t.epoch_batches,
        )

    def resolve(self, path: str) -> Path:
        p = Path(path).expanduser()
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc.pop("base_dir")
        return doc

    def digest(self, *sections: str) -> str:
        """Stable hash over the named sections (all of them when none are given)."""
        doc = self.to_dict()
        doc["seed"] = self.seed
        keys = sections or tuple(doc)
        blob = json.dumps({k: doc[k] for k in keys}, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_SECTIONS = ("data", "pck", "model", "train", "sweep", "approx", "eval", "denoise", "walk")
_TOP = {"seed": int, "out": str, "plots": _bool}


def _converter(default):
    if isinstance(default, bool):
        return _bool
    if isinstance(default, tuple):
        return _ints if all(isinstance(v, int) for v in default) else _floats
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def _apply(obj, section: str, items) -> None:
    defaults = asdict(obj)
    for key, raw in items:
        if key not in defaults:
            raise ConfigError(f"[{section}] {key}: unknown key")
        if key == "epoch_batches":
            conv = _optional_int
        else:
            conv = _converter(defaults[key])
        try:
            setattr(obj, key, conv(raw))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from None


def load_config(path=None, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    """Read and validate an INI file; ``seed`` and ``out`` override the file values."""
    cfg = ExperimentConfig()
    if path is not None:
        path = Path(path)
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg.base_dir = str(path.resolve().parent)
        for section in parser.sections():
            items = parser.items(section)
            if section == "experiment":
                for key, raw in items:
                    if key not in _TOP:
                        raise ConfigError(f"[experiment] {key}: unknown key")
                    try:
                        setattr(cfg, key, _TOP[key](raw))
                    except ValueError as exc:
                        raise ConfigError(f"[experiment] {key}: cannot parse {raw!r} ({exc})") from None
            elif section in _SECTIONS:
                _apply(getattr(cfg, section), section, items)
            else:
                raise ConfigError(f"[{section}]: unknown section")
    if seed is not None:
        cfg.seed = int(seed)
    if out is not None:
        cfg.out = str(out)
    validate(cfg)
    return cfg


def _require(ok: bool, field_name: str, message: str) -> None:
    if not ok:
        raise ConfigError(f"{field_name}: {message}")


def validate(cfg: ExperimentConfig) -> None:
    d = cfg.data
    _require(d.source in ("synthetic", "idx", "csv"), "[data] source", f"must be synthetic, idx or csv, got {d.source!r}")
    _require(len(d.fractions) == 3 and min(d.fractions) >= 0 and abs(sum(d.fractions) - 1.0) <= 1e-9,
             "[data] fractions", f"need three non-negative values summing to 1, got {d.fractions}")
    _require(d.n_samples >= 2, "[data] n_samples", "must be at least 2")
    if d.source == "idx":
        for key in ("images", "labels"):
            value = getattr(d, key)
            _require(bool(value), f"[data] {key}", "required for source = idx")
            _require(cfg.resolve(value).is_file(), f"[data] {key}", f"file not found: {cfg.resolve(value)}")
    elif d.source == "csv":
        _require(bool(d.csv), "[data] csv", "required for source = csv")
        _require(cfg.resolve(d.csv).is_file(), "[data] csv", f"file not found: {cfg.resolve(d.csv)}")
    else:
        _require(d.classes >= 2, "[data] classes", "need at least two classes")
        _require(d.n_samples >= d.classes, "[data] n_samples", "must be at least the number of classes")
        _require(d.dim >= 1, "[data] dim", "must be positive")
    p = cfg.pck
    _require(p.Q >= 1, "[pck] Q", "must be at least 1")
    _require(p.G >= 2, "[pck] G", "must be at least 2")
    _require(p.subset_size >= p.G, "[pck] subset_size", f"must be at least G={p.G}")
    _require(p.n_jobs >= 1, "[pck] n_jobs", "must be positive")
    _require(all(h >= 1 for h in cfg.model.hidden), "[model] hidden",
             "layer sizes must be positive")
    _require(cfg.model.code_size >= 1, "[model] code_size", "must be positive")
    t = cfg.train
    _require(0.0 <= t.lam <= 1.0, "[train] lam", f"must lie in [0, 1], got {t.lam}")
    _require(t.batch_size >= 1, "[train] batch_size", "must be positive")
    _require(t.pretrain_epochs >= 0, "[train] pretrain_epochs", "must be non-negative")
    _require(t.finetune_epochs >= 0, "[train] finetune_epochs", "must be non-negative")
    for key in ("learning_rate", "beta1", "beta2", "epsilon"):
        _require(getattr(t, key) > 0, f"[train] {key}", "must be positive")
    _require(t.beta1 < 1 and t.beta2 < 1, "[train] beta1/beta2", "must be below 1")
    try:
        cfg.train_config()
    except DkaeError as exc:
        raise ConfigError(f"[train] {exc}") from None
    _require(cfg.train.epoch_batches is None or cfg.train.epoch_batches >= 1, "[train] epoch_batches",
             "must be positive or blank")
    _require(all(0.0 <= v <= 1.0 for v in cfg.sweep.lambdas) and cfg.sweep.lambdas, "[sweep] lambdas",
             "values must lie in [0, 1]")
    _require(all(v >= 1 for v in cfg.sweep.code_sizes) and cfg.sweep.code_sizes, "[sweep] code_sizes",
             "values must be positive")
    _require(all(v >= 1 for v in cfg.approx.components) and cfg.approx.components, "[approx] components",
             "values must be positive")
    _require(all(c > 0 for c in cfg.eval.svm_C) and cfg.eval.svm_C, "[eval] svm_C", "values must be positive")
    _require(cfg.eval.svm_epochs >= 1, "[eval] svm_epochs", "must be positive")
    _require(cfg.eval.ksvm_landmarks >= 2, "[eval] ksvm_landmarks", "must be at least 2")
    n = cfg.denoise
    _require(n.noise in ("gaussian", "masking"), "[denoise] noise", f"must be gaussian or masking, got {n.noise!r}")
    _require(n.level >= 0 and (n.noise == "gaussian" or n.level <= 1), "[denoise] level", "out of range")
    _require(n.components >= 1, "[denoise] components", "must be positive")
    _require(n.ridge_lambda > 0, "[denoise] ridge_lambda", "must be positive")
    _require(len(n.classes) >= 1, "[denoise] classes", "need at least one class")
    _require(n.max_images >= 0, "[denoise] max_images", "must be non-negative")
    _require(cfg.walk.pairs >= 1, "[walk] pairs", "must be positive")
    _require(cfg.walk.steps >= 2, "[walk] steps", "must be at least 2")


def render_defaults() -> str:
    """The default configuration as an INI document."""
    cfg = ExperimentConfig()
    lines = ["[experiment]", f"seed = {cfg.seed}", f"out = {cfg.out}", f"plots = {str(cfg.plots).lower()}"]
    for section in _SECTIONS:
        lines += ["", f"[{section}]"]
        for key, value in asdict(getattr(cfg, section)).items():
            if isinstance(value, (tuple, list)):
                value = ", ".join(str(v) for v in value)
            elif value is None:
                value = ""
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
