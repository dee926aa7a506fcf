"""Tied-weight stacked autoencoder trained with a reconstruction + kernel alignment loss.

Layer ``l`` maps ``dims[l] -> dims[l+1]``. The encoder computes
``H_{l+1} = sigmoid(H_l @ W_l + b_l)`` and the decoder runs the same weights
backwards, ``G_l = sigmoid(G_{l+1} @ W_l.T + c_l)``, so decoder weights are
never stored. For a mini-batch of ``k`` rows with prior submatrix ``P_k`` the
loss is::

    (1 - lam) / (k d) * sum_i ||x_i - xrec_i||^2
        + lam * || C_k/||C_k||_F - P_k/||P_k||_F ||_F,     C_k = H H^T

Gradients are derived by hand, including the batch-coupled alignment path
through ``C_k`` and the tied-weight sum of encoder and decoder contributions.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import DegenerateCodesError, DimensionError, ParameterError
from .linalg import as_matrix, load_matrix, save_matrix

CODE_NORM_FLOOR = 1e-12


def sub_seed(seed: int, name: str) -> int:
    """Derive an independent named seed from a master seed."""
    tag = int.from_bytes(name.encode(), "little") % (2**63)
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


@dataclass
class AutoencoderParams:
    layer_dims: tuple
    weights: list  # W_l, shape (dims[l], dims[l+1])
    enc_biases: list  # b_l, shape (dims[l+1],)
    dec_biases: list  # c_l, shape (dims[l],)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list:
        return [*self.weights, *self.enc_biases, *self.dec_biases]

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "AutoencoderParams":
        return AutoencoderParams(
            tuple(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.enc_biases],
            [c.copy() for c in self.dec_biases],
        )

    def layer(self, l: int) -> "AutoencoderParams":
        """Single-layer autoencoder sharing (not copying) the arrays of layer ``l``."""
        return AutoencoderParams(
            (self.layer_dims[l], self.layer_dims[l + 1]),
            [self.weights[l]], [self.enc_biases[l]], [self.dec_biases[l]],
        )

    def zeros_like(self) -> "AutoencoderParams":
        return AutoencoderParams(
            tuple(self.layer_dims),
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.enc_biases],
            [np.zeros_like(c) for c in self.dec_biases],
        )


@dataclass
class TrainConfig:
    lam: float = 0.1
    batch_size: int = 200
    pretrain_epochs: int = 30
    finetune_epochs: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    epoch_batches: int | None = None  # None means (n/k)^2

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ParameterError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be positive")
        if min(self.learning_rate, self.beta1, self.beta2, self.epsilon) <= 0:
            raise ParameterError("optimizer constants must be positive")
        if self.pretrain_epochs < 0 or self.finetune_epochs < 0:
            raise ParameterError("epoch counts must be non-negative")

    def batches_per_epoch(self, n: int) -> int:
        if self.epoch_batches is not None:
            return int(self.epoch_batches)
        return max(1, int(round((n / self.batch_size) ** 2)))


@dataclass
class BatchLossReport:
    total: float
    reconstruction_term: float  # mean squared error per entry, i.e. sum / (k d)
    alignment_term: float  # NaN when no prior is involved

    def as_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}


@dataclass
class ForwardPass:
    encoder: list  # [X, H_1, ..., H_L]
    decoder: list  # [G_0 (= reconstruction), ..., G_L (= codes)]

    @property
    def codes(self) -> np.ndarray:
        return self.encoder[-1]

    @property
    def reconstructions(self) -> np.ndarray:
        return self.decoder[0]


class Adam:
    """Adam with bias-corrected moments, one state slot per parameter array."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr, self.beta1, self.beta2, self.epsilon = lr, beta1, beta2, epsilon
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params: list, grads: list) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)


def init_params(layer_dims, seed: int) -> AutoencoderParams:
    """Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2 or min(dims) < 1:
        raise ParameterError(f"need at least two positive layer sizes, got {dims}")
    rng = np.random.default_rng(seed)
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    return AutoencoderParams(
        dims, weights,
        [np.zeros(d) for d in dims[1:]],
        [np.zeros(d) for d in dims[:-1]],
    )


def _check_input(params: AutoencoderParams, x) -> np.ndarray:
    x = as_matrix(x, "X")
    if x.shape[1] != params.layer_dims[0]:
        raise DimensionError(f"network expects {params.layer_dims[0]} inputs, got {x.shape[1]}")
    return x


def encode(params: AutoencoderParams, x) -> np.ndarray:
    h = _check_input(params, x)
    for w, b in zip(params.weights, params.enc_biases):
        h = expit(h @ w + b)
    return h


def decode(params: AutoencoderParams, h) -> np.ndarray:
    """Map arbitrary code-space vectors back to input space."""
    g = as_matrix(h, "H")
    if g.shape[1] != params.layer_dims[-1]:
        raise DimensionError(f"code size is {params.layer_dims[-1]}, got {g.shape[1]}")
    for w, c in zip(reversed(params.weights), reversed(params.dec_biases)):
        g = expit(g @ w.T + c)
    return g


def forward(params: AutoencoderParams, x) -> ForwardPass:
    x = _check_input(params, x)
    enc = [x]
    for w, b in zip(params.weights, params.enc_biases):
        enc.append(expit(enc[-1] @ w + b))
    dec = [enc[-1]]
    for w, c in zip(reversed(params.weights), reversed(params.dec_biases)):
        dec.append(expit(dec[-1] @ w.T + c))
    dec.reverse()
    return ForwardPass(enc, dec)


def _alignment_and_grad(h, p_k, need_grad):
    """Normalised Frobenius distance of ``h h^T`` to ``p_k`` and its gradient w.r.t. ``h``."""
    c = h @ h.T
    nc = np.linalg.norm(c)
    if nc < CODE_NORM_FLOOR:
        raise DegenerateCodesError(f"||C_k||_F = {nc:.3e} below {CODE_NORM_FLOOR:g}")
    npk = np.linalg.norm(p_k)
    if npk == 0.0:
        raise DegenerateCodesError("prior submatrix has zero norm")
    c_hat = c / nc
    diff = c_hat - p_k / npk
    dist = float(np.linalg.norm(diff))
    if not need_grad:
        return dist, None
    if dist == 0.0:
        return dist, np.zeros_like(h)
    g_hat = diff / dist
    d_c = (g_hat - np.sum(g_hat * c_hat) * c_hat) / nc
    return dist, 2.0 * (d_c @ h)


def _loss(params, x, p_k, lam, need_grad):
    if p_k is not None:
        p_k = np.asarray(p_k.values if hasattr(p_k, "values") else p_k, dtype=np.float64)
        if p_k.shape != (x.shape[0], x.shape[0]):
            raise DimensionError(f"prior block must be {x.shape[0]}x{x.shape[0]}, got {p_k.shape}")
    elif lam != 0.0:
        raise ParameterError("a prior kernel is required when lambda > 0")
    fp = forward(params, x)
    k, d = x.shape
    resid = fp.reconstructions - x
    rec = float(np.sum(resid * resid)) / (k * d)
    if p_k is not None:
        align, d_h_align = _alignment_and_grad(fp.codes, p_k, need_grad)
        total = (1.0 - lam) * rec + lam * align
    else:
        align, d_h_align = float("nan"), None
        total = rec
    report = BatchLossReport(total, rec, align)
    if not need_grad:
        return report, None

    grads = params.zeros_like()
    L = params.n_layers
    upstream = (2.0 * (1.0 - lam) / (k * d)) * resid
    # decoder path: G_0 back to the code layer G_L
    for l in range(L):
        g_out = fp.decoder[l]
        delta = upstream * g_out * (1.0 - g_out)
        grads.dec_biases[l] += delta.sum(axis=0)
        grads.weights[l] += delta.T @ fp.decoder[l + 1]
        upstream = delta @ params.weights[l]
    if d_h_align is not None:
        upstream = upstream + lam * d_h_align
    # encoder path: code layer back to the input
    for l in range(L - 1, -1, -1):
        h_out = fp.encoder[l + 1]
        delta = upstream * h_out * (1.0 - h_out)
        grads.enc_biases[l] += delta.sum(axis=0)
        grads.weights[l] += fp.encoder[l].T @ delta
        if l > 0:
            upstream = delta @ params.weights[l].T
    return report, grads


def batch_loss(params: AutoencoderParams, x, p_k, lam: float) -> BatchLossReport:
    """Joint mini-batch loss. ``p_k=None`` (with ``lam=0``) is the plain autoencoder loss."""
    x = _check_input(params, x)
    return _loss(params, x, p_k, lam, need_grad=False)[0]


def gradients(params: AutoencoderParams, x, p_k, lam: float) -> AutoencoderParams:
    """Gradient of :func:`batch_loss`, returned with the same layout as ``params``."""
    x = _check_input(params, x)
    return _loss(params, x, p_k, lam, need_grad=True)[1]


def loss_and_gradients(params, x, p_k, lam):
    x = _check_input(params, x)
    return _loss(params, x, p_k, lam, need_grad=True)


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)  # BatchLossReport averaged per epoch

    def totals(self) -> list:
        return [e.total for e in self.epochs]


def _prior_values(prior):
    if prior is None:
        return None
    return np.asarray(prior.values if hasattr(prior, "values") else prior, dtype=np.float64)


def _run_epochs(params, x, prior, lam, epochs, config, rng, history, callback=None):
    n = x.shape[0]
    k = config.batch_size
    if k > n:
        raise ParameterError(f"batch size {k} exceeds sample count {n}")
    per_epoch = config.batches_per_epoch(n)
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.epsilon)
    arrays = params.arrays()
    for _ in range(epochs):
        sums = np.zeros(3)
        for _ in range(per_epoch):
            idx = rng.choice(n, size=k, replace=False)
            p_k = None if prior is None else prior[np.ix_(idx, idx)]
            try:
                report, grads = _loss(params, x[idx], p_k, lam, need_grad=True)
            except DegenerateCodesError as exc:
                exc.history = history
                raise
            opt.step(arrays, grads.arrays())
            sums += (report.total, report.reconstruction_term, report.alignment_term)
        history.epochs.append(BatchLossReport(*(float(s) / per_epoch for s in sums)))
        if callback is not None:
            callback(len(history.epochs), params, history)
    return history


def pretrain(x, layer_dims, config: TrainConfig, prior=None) -> AutoencoderParams:
    """Greedy layer-wise pretraining of the tied-weight stack.

    Each layer is trained as a single autoencoder on the frozen encoding of
    the layers below it. Only the innermost layer uses the joint loss with
    ``config.lam`` and ``prior`` (an n x n kernel over the rows of ``x``);
    outer layers minimise reconstruction error alone.
    """
    x = as_matrix(x, "X")
    params = init_params(layer_dims, sub_seed(config.seed, "init"))
    if params.layer_dims[0] != x.shape[1]:
        raise DimensionError(f"layer_dims[0]={params.layer_dims[0]} but data has {x.shape[1]} columns")
    prior = _prior_values(prior)
    if prior is not None and prior.shape != (x.shape[0], x.shape[0]):
        raise DimensionError(f"prior must be {x.shape[0]}x{x.shape[0]}")
    if config.pretrain_epochs == 0:
        return params
    rng = np.random.default_rng(sub_seed(config.seed, "pretrain-batches"))
    rep = x
    for l in range(params.n_layers):
        innermost = l == params.n_layers - 1 and prior is not None
        layer = params.layer(l)
        _run_epochs(layer, rep, prior if innermost else None, config.lam if innermost else 0.0,
                    config.pretrain_epochs, config, rng, TrainHistory())
        rep = encode(layer, rep)
    return params


def train(params: AutoencoderParams, x, prior, config: TrainConfig, callback=None):
    """Fine-tune the whole stack with the joint loss; returns ``(params, history)``.

    ``prior=None`` trains a plain tied-weight autoencoder and requires
    ``config.lam == 0``. The input parameters are not modified.
    ``callback(epoch, params, history)`` runs after every epoch.
    """
    x = _check_input(params, x)
    prior = _prior_values(prior)
    if prior is not None and prior.shape != (x.shape[0], x.shape[0]):
        raise DimensionError(f"prior must be {x.shape[0]}x{x.shape[0]}")
    lam = config.lam if prior is not None else 0.0
    if prior is None and config.lam != 0.0:
        raise ParameterError("a prior kernel is required when lambda > 0")
    params = params.copy()
    rng = np.random.default_rng(sub_seed(config.seed, "finetune-batches"))
    history = _run_epochs(params, x, prior, lam, config.finetune_epochs, config, rng, TrainHistory(), callback)
    return params, history


def fit(x, layer_dims, prior, config: TrainConfig):
    """Pretrain then fine-tune; the usual entry point."""
    params = pretrain(x, layer_dims, config, prior)
    return train(params, x, prior, config)


def evaluate(params: AutoencoderParams, x, prior=None, lam: float = 0.0) -> BatchLossReport:
    """Loss of the whole data set treated as one batch (``C`` over all rows)."""
    x = _check_input(params, x)
    prior = _prior_values(prior)
    return _loss(params, x, prior, lam, need_grad=False)[0]


def save_params(params: AutoencoderParams, directory, config: TrainConfig | None = None, epoch: int | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for l in range(params.n_layers):
        save_matrix(directory / f"W{l}.dkmat", params.weights[l])
        save_matrix(directory / f"b{l}.dkmat", params.enc_biases[l][None, :])
        save_matrix(directory / f"c{l}.dkmat", params.dec_biases[l][None, :])
    manifest = {
        "layer_dims": list(params.layer_dims),
        "config": None if config is None else asdict(config),
        "epoch": epoch,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_params(directory) -> tuple[AutoencoderParams, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    dims = tuple(manifest["layer_dims"])
    L = len(dims) - 1
    params = AutoencoderParams(
        dims,
        [load_matrix(directory / f"W{l}.dkmat") for l in range(L)],
        [load_matrix(directory / f"b{l}.dkmat")[0] for l in range(L)],
        [load_matrix(directory / f"c{l}.dkmat")[0] for l in range(L)],
    )
    return params, manifest
