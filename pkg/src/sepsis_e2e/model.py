"""Classifier assembly, training loops, grid search, and model files.

The classifier is a fixed [D, 32, 16, 8, 2] stack trained with mini-batch
SGD on softmax cross-entropy. An optional reconstruction pass pretrains
the first two layers as the encoder half of a [D, 32, 16, 32, D]
autoencoder and hands their weights to build_model. Persistence is a
single self-describing binary file with a trailing content hash so a
save/load round trip is bit-exact.
"""

import hashlib
import math
import struct
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import evalstats
from .errors import (
    BadDimsError,
    BadDomainError,
    ChecksumFailError,
    CorruptFileError,
    EmptyGridError,
    EmptyInputError,
    NonFiniteInputError,
    NonFiniteLossError,
    ShapeMismatchError,
    VersionMismatchError,
)
from .nn import network
from .pipeline import Sample, sample_matrix
from .rng import derive_seed, make_rng

HIDDEN_DIMS = (32, 16, 8)
N_CLASSES = 2
LATENT_DIM = 16

MODEL_MAGIC = b"E2E-SEPSIS-MODEL"
MODEL_VERSION = 1
_CHECKSUM_LEN = 8


@dataclass
class TrainConfig:
    learning_rate: float = 7e-4
    epochs: int = 550
    batch_size: int = 32
    dropout_p: float = 0.5
    seed: int = 0
    threshold: float = 0.5

    def __post_init__(self):
        if not self.learning_rate > 0.0:
            raise BadDomainError("learning_rate must be positive, got %r" % (self.learning_rate,))
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise BadDomainError("epochs must be a positive integer, got %r" % (self.epochs,))
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise BadDomainError("batch_size must be a positive integer, got %r" % (self.batch_size,))
        if not 0.0 <= self.dropout_p < 1.0:
            raise BadDomainError("dropout_p must be in [0, 1), got %r" % (self.dropout_p,))
        if not 0.0 <= self.threshold <= 1.0:
            raise BadDomainError("threshold must be in [0, 1], got %r" % (self.threshold,))
        self.epochs = int(self.epochs)
        self.batch_size = int(self.batch_size)


@dataclass
class TrainHistory:
    """Per-epoch mean training loss; one entry per completed epoch."""

    losses: list = field(default_factory=list)


@dataclass
class GridSpec:
    learning_rates: list
    epoch_counts: list
    selection: str = "sensitivity_plus_ppv"


@dataclass
class GridCell:
    learning_rate: float
    epochs: int
    seed: int
    sensitivity: float
    ppv: float
    score: float


def build_model(d, dropout_p, seed, encoder_init=None):
    """Initialize the [D, 32, 16, 8, 2] classifier.

    encoder_init, when given, is two (weights, biases) pairs that replace
    the first two layers after the full seeded initialization, so the
    remaining layers are identical with or without it.
    """
    if int(d) != d or d < 1:
        raise BadDimsError("input width must be a positive integer, got %r" % (d,))
    net = network.init_network([int(d)] + list(HIDDEN_DIMS) + [N_CLASSES], dropout_p, seed)
    if encoder_init is not None:
        pairs = list(encoder_init)
        if len(pairs) != 2:
            raise ShapeMismatchError("encoder_init must hold exactly 2 layers, got %d" % len(pairs))
        for layer, (w, b) in zip(net.layers, pairs):
            w = np.ascontiguousarray(w, dtype=np.float64)
            b = np.ascontiguousarray(b, dtype=np.float64)
            if w.shape != layer.weights.shape or b.shape != layer.biases.shape:
                raise ShapeMismatchError(
                    "encoder_init shapes %s/%s do not fit layer %s/%s"
                    % (w.shape, b.shape, layer.weights.shape, layer.biases.shape)
                )
            layer.weights = w
            layer.biases = b
    return net


def latent_code(net, x):
    """Evaluation-mode activations after the second layer (the 16-vector)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    _, cache = network.forward_batch(net, x.reshape(1, -1), training=False)
    return cache.inputs[2][0].copy()


def _input_matrix(net, samples):
    """Stack Samples to match the network, appending mask channels if the
    input layer is twice the feature width."""
    d = len(samples[0].values)
    want_masks = net.layers[0].in_dim == 2 * d and d > 0
    return sample_matrix(samples, append_mask_channels=want_masks)


def train(samples, cfg, append_mask_channels=False, encoder_init=None):
    """Mini-batch SGD over softmax cross-entropy.

    Each epoch reshuffles with the seeded RNG, walks batches of
    cfg.batch_size (last one short), backpropagates the mean-of-batch
    gradient, and records the epoch's mean per-sample loss. A non-finite
    loss aborts with the epoch and batch index.
    """
    samples = list(samples)
    if not samples:
        raise EmptyInputError("no training samples")
    x, y = sample_matrix(samples, append_mask_channels=append_mask_channels)
    if np.unique(y).size < 2:
        warnings.warn(
            "training data contains a single class; the loss will collapse",
            stacklevel=2,
        )
    net = build_model(x.shape[1], cfg.dropout_p, cfg.seed, encoder_init=encoder_init)
    history = _sgd_epochs(net, x, y, cfg, _ce_batch)
    return net, history


def _ce_batch(net, xb, yb, rng):
    """One cross-entropy training batch; returns (loss sum, gradients)."""
    logits, cache = network.forward_batch(net, xb, training=True, rng=rng)
    _, losses, dlogits = network.softmax_cross_entropy_batch(logits, yb)
    grads = network.backward(net, cache, dlogits / xb.shape[0])
    return float(losses.sum()), grads


def _sgd_epochs(net, x, y, cfg, batch_fn):
    """Shared shuffle/batch/step loop for both training modes."""
    n = x.shape[0]
    rng = make_rng(derive_seed(cfg.seed, "train"))
    history = TrainHistory()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for batch_index, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            xb = np.ascontiguousarray(x[idx])
            yb = np.ascontiguousarray(y[idx])
            try:
                loss_sum, grads = batch_fn(net, xb, yb, rng)
            except NonFiniteInputError as exc:
                raise NonFiniteLossError(
                    "loss diverged at epoch %d batch %d: %s" % (epoch, batch_index, exc)
                ) from exc
            if not math.isfinite(loss_sum):
                raise NonFiniteLossError(
                    "loss diverged at epoch %d batch %d" % (epoch, batch_index)
                )
            network.sgd_step(net, grads, cfg.learning_rate)
            total += loss_sum
        history.losses.append(total / n)
    return history


def pretrain_reconstruction(samples, cfg, append_mask_channels=False):
    """Train a [D, 32, 16, 32, D] reconstruction stack on mean squared error.

    Runs without dropout regardless of cfg.dropout_p and returns
    (encoder_init, history) where encoder_init is the two leading
    (weights, biases) pairs ready for build_model.
    """
    samples = list(samples)
    if not samples:
        raise EmptyInputError("no pretraining samples")
    x, _ = sample_matrix(samples, append_mask_channels=append_mask_channels)
    d = x.shape[1]
    net = network.init_network(
        [d, HIDDEN_DIMS[0], HIDDEN_DIMS[1], HIDDEN_DIMS[0], d],
        0.0,
        derive_seed(cfg.seed, "pretrain"),
    )

    def mse_batch(net, xb, yb, rng):
        recon, cache = network.forward_batch(net, xb, training=False)
        diff = recon - xb
        losses = (diff * diff).mean(axis=1)
        dout = diff * (2.0 / (d * xb.shape[0]))
        grads = network.backward(net, cache, dout)
        return float(losses.sum()), grads

    pre_cfg = replace(cfg, dropout_p=0.0, seed=derive_seed(cfg.seed, "pretrain"))
    history = _sgd_epochs(net, x, x, pre_cfg, mse_batch)
    encoder = [
        (net.layers[0].weights.copy(), net.layers[0].biases.copy()),
        (net.layers[1].weights.copy(), net.layers[1].biases.copy()),
    ]
    return encoder, history


def predict(net, sample, threshold=0.5):
    """Evaluation-mode probability of the positive class and its thresholded
    0/1 label (1 when probability >= threshold).

    Accepts a Sample (mask channels appended automatically when the
    network expects them) or a bare feature vector.
    """
    if isinstance(sample, Sample):
        vec, _ = _input_matrix(net, [sample])
        vec = vec[0]
    else:
        vec = np.asarray(sample, dtype=np.float64).reshape(-1)
    logits, _ = network.forward(net, vec, training=False)
    shifted = logits - logits.max()
    e = np.exp(shifted)
    prob = float(e[1] / e.sum())
    return prob, int(prob >= threshold)


def grid_search(train_samples, val_samples, grid, base_cfg, append_mask_channels=False):
    """Train one model per (learning_rate, epochs) cell and pick the best.

    Each cell trains from its own derived seed and is scored on the
    validation samples by sensitivity + PPV as fractions, NaN scoring 0.
    Ties prefer the lowest learning rate, then the fewest epochs. Returns
    (winning TrainConfig, per-cell score list).
    """
    rates = list(grid.learning_rates)
    epoch_counts = list(grid.epoch_counts)
    if not rates or not epoch_counts:
        raise EmptyGridError("grid needs at least one learning rate and one epoch count")
    if grid.selection != "sensitivity_plus_ppv":
        raise BadDomainError("unknown selection rule %r" % (grid.selection,))
    train_samples = list(train_samples)
    val_samples = list(val_samples)
    if not train_samples or not val_samples:
        raise EmptyInputError("grid search needs non-empty train and validation sets")

    labels = [s.label for s in val_samples]
    cells = []
    for lr in rates:
        for epochs in epoch_counts:
            seed = derive_seed(base_cfg.seed, repr(float(lr)), int(epochs))
            cfg = replace(base_cfg, learning_rate=lr, epochs=epochs, seed=seed)
            net, _ = train(train_samples, cfg, append_mask_channels=append_mask_channels)
            preds = [predict(net, s, base_cfg.threshold)[1] for s in val_samples]
            m = evalstats.metrics(evalstats.confusion(preds, labels))
            sens = 0.0 if m["sensitivity"] != m["sensitivity"] else m["sensitivity"] / 100.0
            ppv = 0.0 if m["ppv"] != m["ppv"] else m["ppv"] / 100.0
            cells.append(
                GridCell(
                    learning_rate=float(lr),
                    epochs=int(epochs),
                    seed=seed,
                    sensitivity=sens,
                    ppv=ppv,
                    score=sens + ppv,
                )
            )
    best = min(cells, key=lambda c: (-c.score, c.learning_rate, c.epochs))
    best_cfg = replace(base_cfg, learning_rate=best.learning_rate, epochs=best.epochs)
    return best_cfg, cells


def save_model(net, path, schema_hash="0" * 16, norm_ref=""):
    """Write the network to a self-describing binary file.

    Layout: 16-byte magic, u32 version, 8-byte feature-schema hash, u32
    layer-dim count then the dims, f64 dropout_p, length-prefixed UTF-8
    reference to the normalization stats file, then every layer's weights
    (row-major) and biases as little-endian f64, and finally the first 8
    bytes of the SHA-256 of everything before it.
    """
    try:
        hash_bytes = bytes.fromhex(schema_hash)
    except ValueError:
        raise BadDomainError("schema_hash must be 8 bytes of hex, got %r" % (schema_hash,))
    if len(hash_bytes) != 8:
        raise BadDomainError("schema_hash must be 8 bytes of hex, got %r" % (schema_hash,))
    dims = net.dims
    dropout_p = net.layers[0].dropout_p if len(net.layers) > 1 else 0.0
    ref = norm_ref.encode("utf-8")
    parts = [
        MODEL_MAGIC,
        struct.pack("<I", MODEL_VERSION),
        hash_bytes,
        struct.pack("<I", len(dims)),
        struct.pack("<%dI" % len(dims), *dims),
        struct.pack("<d", dropout_p),
        struct.pack("<I", len(ref)),
        ref,
    ]
    for layer in net.layers:
        parts.append(layer.weights.astype("<f8", copy=False).tobytes())
        parts.append(layer.biases.astype("<f8", copy=False).tobytes())
    body = b"".join(parts)
    digest = hashlib.sha256(body).digest()[:_CHECKSUM_LEN]
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(digest)


def load_model(path, expected_schema_hash=None):
    """Read a model file back into (Network, metadata dict).

    Bad magic or truncation raises CorruptFileError, an unknown version or
    schema-hash mismatch raises VersionMismatchError, and a content-hash
    mismatch on an otherwise well-formed file raises ChecksumFailError.
    """
    with open(path, "rb") as fh:
        data = fh.read()

    offset = [0]

    def take(n, what):
        if offset[0] + n > len(data) - _CHECKSUM_LEN:
            raise CorruptFileError("%s: truncated reading %s" % (path, what))
        out = data[offset[0] : offset[0] + n]
        offset[0] += n
        return out

    if len(data) < len(MODEL_MAGIC) + _CHECKSUM_LEN or not data.startswith(MODEL_MAGIC):
        raise CorruptFileError("%s: not a model file" % path)
    offset[0] = len(MODEL_MAGIC)
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != MODEL_VERSION:
        raise VersionMismatchError("%s: file version %d, expected %d" % (path, version, MODEL_VERSION))
    schema_hash = take(8, "schema hash").hex()
    (n_dims,) = struct.unpack("<I", take(4, "dim count"))
    if n_dims < 2 or n_dims > 64:
        raise CorruptFileError("%s: implausible dim count %d" % (path, n_dims))
    dims = list(struct.unpack("<%dI" % n_dims, take(4 * n_dims, "dims")))
    (dropout_p,) = struct.unpack("<d", take(8, "dropout"))
    (ref_len,) = struct.unpack("<I", take(4, "norm ref length"))
    try:
        norm_ref = take(ref_len, "norm ref").decode("utf-8")
    except UnicodeDecodeError:
        raise CorruptFileError("%s: undecodable norm ref" % path) from None

    layers = []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(take(8 * n_in * n_out, "weights"), dtype="<f8").reshape(n_out, n_in)
        b = np.frombuffer(take(8 * n_out, "biases"), dtype="<f8")
        layers.append((w.astype(np.float64), b.astype(np.float64)))
    if offset[0] != len(data) - _CHECKSUM_LEN:
        raise CorruptFileError("%s: %d trailing bytes" % (path, len(data) - _CHECKSUM_LEN - offset[0]))

    digest = hashlib.sha256(data[: -_CHECKSUM_LEN]).digest()[:_CHECKSUM_LEN]
    if digest != data[-_CHECKSUM_LEN:]:
        raise ChecksumFailError("%s: content hash does not match" % path)
    if expected_schema_hash is not None and schema_hash != expected_schema_hash:
        raise VersionMismatchError(
            "%s: schema hash %s does not match expected %s" % (path, schema_hash, expected_schema_hash)
        )
    if not 0.0 <= dropout_p < 1.0:
        raise CorruptFileError("%s: dropout %r out of range" % (path, dropout_p))

    try:
        net = network.init_network(dims, dropout_p, 0)
    except BadDimsError as exc:
        raise CorruptFileError("%s: %s" % (path, exc)) from None
    for layer, (w, b) in zip(net.layers, layers):
        layer.weights = np.ascontiguousarray(w)
        layer.biases = np.ascontiguousarray(b)
    meta = {
        "version": version,
        "schema_hash": schema_hash,
        "norm_ref": norm_ref,
        "dims": dims,
        "dropout_p": dropout_p,
    }
    return net, meta
