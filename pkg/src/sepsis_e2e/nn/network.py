"""Dense feed-forward engine.

Implements the network used for risk scoring: linear layers with ReLU
hidden activations, inverted dropout at train time, a two-logit output
head trained with softmax cross entropy, reverse-mode gradients, plain
SGD, and a finite-difference gradient checker.

All arithmetic is float64. Heavy kernels are delegated to the selected
backend (see :mod:`sepsis_e2e.nn.backends`); dropout masks and every other
random draw happen here in numpy, so both backends consume identical
random streams.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import (
    BadDimsError,
    BadDomainError,
    BadLabelError,
    DimensionMismatchError,
    LengthMismatchError,
    NonFiniteInputError,
    ShapeMismatchError,
    StaleCacheError,
)
from ..rng import derive_seed, make_rng
from . import backends

RELU = "relu"
IDENTITY = "identity"


@dataclass
class LayerSpec:
    """One dense layer: weights (out_dim, in_dim), biases (out_dim,)."""

    in_dim: int
    out_dim: int
    weights: np.ndarray
    biases: np.ndarray
    activation: str
    dropout_p: float


@dataclass
class Network:
    """Ordered stack of layers; the last layer emits raw logits."""

    layers: list

    @property
    def dims(self):
        return [self.layers[0].in_dim] + [l.out_dim for l in self.layers]

    @property
    def n_params(self):
        return sum(l.weights.size + l.biases.size for l in self.layers)


@dataclass
class ForwardCache:
    """Intermediates kept by a forward pass for the matching backward."""

    net: Network
    inputs: list
    zs: list
    masks: list
    training: bool


def init_network(dims, dropout_p=0.0, seed=0):
    """Build a network with uniform Glorot weights and zero biases.

    Weights for each layer are drawn from
    uniform(-sqrt(6/(in+out)), +sqrt(6/(in+out))), one draw per layer in
    order, from a PCG64 generator seeded with ``seed``. Hidden layers get
    ReLU activation and dropout rate ``dropout_p``; the output layer is
    linear with no dropout.

    Raises:
        BadDimsError: fewer than two dims, or a non-positive entry.
        BadDomainError: dropout_p outside [0, 1).
    """
    dims = list(dims)
    if len(dims) < 2:
        raise BadDimsError("need at least input and output dims, got %r" % (dims,))
    for d in dims:
        if int(d) != d or d <= 0:
            raise BadDimsError("dims must be positive integers, got %r" % (dims,))
    dropout_p = float(dropout_p)
    if not 0.0 <= dropout_p < 1.0:
        raise BadDomainError("dropout_p must be in [0, 1), got %r" % dropout_p)

    rng = make_rng(seed)
    layers = []
    last = len(dims) - 2
    for i in range(len(dims) - 1):
        n_in, n_out = int(dims[i]), int(dims[i + 1])
        limit = math.sqrt(6.0 / (n_in + n_out))
        weights = rng.uniform(-limit, limit, size=(n_out, n_in))
        layers.append(
            LayerSpec(
                in_dim=n_in,
                out_dim=n_out,
                weights=weights,
                biases=np.zeros(n_out, dtype=np.float64),
                activation=IDENTITY if i == last else RELU,
                dropout_p=0.0 if i == last else dropout_p,
            )
        )
    return Network(layers=layers)


def sample_dropout_mask(rng, shape, p):
    """Draw an inverted-dropout mask: entries are 0 or 1/(1-p).

    Each unit is dropped independently with probability ``p``; survivors
    are scaled by 1/(1-p) so the expected output matches an undropped pass.
    """
    mask = (rng.random(shape) >= p).astype(np.float64)
    mask *= 1.0 / (1.0 - p)
    return mask


def _as_batch(x, n_in):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != n_in:
        raise DimensionMismatchError(
            "expected input width %d, got shape %r" % (n_in, x.shape)
        )
    return x


def forward_batch(net, x, training=False, rng=None, masks=None):
    """Run a batch (B, D) through the network.

    In training mode each dropout layer multiplies its output by a fresh
    inverted-dropout mask of shape (B, out_dim), drawn layer by layer in
    order from ``rng`` (or taken from ``masks``, a per-layer list, when
    given). Eval mode applies no dropout and no scaling.

    Returns (logits, cache) with logits of shape (B, K).
    """
    x = _as_batch(x, net.layers[0].in_dim)
    needs_rng = training and masks is None and any(
        l.dropout_p > 0.0 for l in net.layers
    )
    if needs_rng and rng is None:
        raise ValueError("training-mode forward with dropout needs rng or masks")

    a = x
    inputs, zs, used = [], [], []
    for i, layer in enumerate(net.layers):
        inputs.append(a)
        z = backends.affine(a, layer.weights, layer.biases)
        zs.append(z)
        h = backends.relu(z) if layer.activation == RELU else z
        mask = None
        if training and layer.dropout_p > 0.0:
            if masks is not None:
                mask = masks[i]
            else:
                mask = sample_dropout_mask(
                    rng, (a.shape[0], layer.out_dim), layer.dropout_p
                )
            h = backends.elementwise_mul(h, mask)
        used.append(mask)
        a = h
    cache = ForwardCache(net=net, inputs=inputs, zs=zs, masks=used, training=training)
    return a, cache


def forward(net, x, training=False, rng=None, masks=None):
    """Single-sample forward; ``x`` is a length-D vector.

    Returns (logits, cache) with logits of shape (K,).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatchError("expected a 1-d input, got shape %r" % (x.shape,))
    logits, cache = forward_batch(
        net, x.reshape(1, -1), training=training, rng=rng, masks=masks
    )
    return logits[0], cache


def softmax_cross_entropy_batch(logits, labels):
    """Stable softmax cross entropy over a batch.

    Args:
        logits: (B, K) float array, finite.
        labels: (B,) integer class indices.

    Returns:
        (probs, losses, dlogits): softmax probabilities (B, K), per-sample
        losses (B,), and per-sample gradients softmax - onehot (B, K).
        Probabilities are clamped to [1e-12, 1 - 1e-12] before the log;
        dlogits is unscaled, so divide by B for a batch-mean gradient.
    """
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise DimensionMismatchError("logits must be 2-d, got shape %r" % (logits.shape,))
    if not np.isfinite(logits).all():
        raise NonFiniteInputError("logits contain NaN or infinity")
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise LengthMismatchError(
            "got %d labels for %d logit rows" % (labels.size, logits.shape[0])
        )
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise BadLabelError("labels must lie in [0, %d)" % k)
    return backends.softmax_ce(logits, labels)


def softmax_cross_entropy(logits, label):
    """Single-sample softmax cross entropy on two (or K) logits.

    Returns (loss, prob_positive, dlogits) where prob_positive is the
    softmax probability of class 1 and dlogits = softmax - onehot(label).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise DimensionMismatchError("logits must be 1-d, got shape %r" % (logits.shape,))
    probs, losses, dlogits = softmax_cross_entropy_batch(
        logits.reshape(1, -1), np.array([label], dtype=np.int64)
    )
    return float(losses[0]), float(probs[0, 1]), dlogits[0]


def backward(net, cache, dlogits):
    """Reverse-mode gradients from output-logit gradients.

    ``dlogits`` has shape (B, K) (or (K,) for a single-sample cache) and
    is accumulated over rows: passing per-sample values scaled by 1/B
    yields batch-mean gradients. Dropout masks and ReLU gates recorded in
    the cache are replayed exactly.

    Returns a list of (dweights, dbiases) pairs, one per layer, with the
    same shapes as the parameters.

    Raises:
        StaleCacheError: cache was built by a forward on a different net.
    """
    if cache.net is not net:
        raise StaleCacheError("cache does not belong to this network")
    dlogits = np.ascontiguousarray(dlogits, dtype=np.float64)
    if dlogits.ndim == 1:
        dlogits = dlogits.reshape(1, -1)
    last = net.layers[-1]
    want = (cache.zs[-1].shape[0], last.out_dim)
    if dlogits.shape != want:
        raise ShapeMismatchError(
            "dlogits shape %r does not match %r" % (dlogits.shape, want)
        )

    grads = [None] * len(net.layers)
    d = dlogits
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        dx, dw, db = backends.affine_backward(cache.inputs[i], layer.weights, d)
        grads[i] = (dw, db)
        if i == 0:
            break
        if cache.masks[i - 1] is not None:
            dx = backends.elementwise_mul(dx, cache.masks[i - 1])
        if net.layers[i - 1].activation == RELU:
            dx = backends.relu_backward(cache.zs[i - 1], dx)
        d = dx
    return grads


def sgd_step(net, grads, learning_rate):
    """In-place plain SGD: p := p - lr * g for every parameter.

    Returns the (mutated) network.
    """
    if len(grads) != len(net.layers):
        raise ShapeMismatchError(
            "got %d gradient pairs for %d layers" % (len(grads), len(net.layers))
        )
    lr = float(learning_rate)
    for layer, (dw, db) in zip(net.layers, grads):
        if dw.shape != layer.weights.shape or db.shape != layer.biases.shape:
            raise ShapeMismatchError(
                "gradient shapes %r/%r do not match layer %r/%r"
                % (dw.shape, db.shape, layer.weights.shape, layer.biases.shape)
            )
        backends.sgd_update_flat(
            layer.weights.ravel(), np.ascontiguousarray(dw).ravel(), lr
        )
        backends.sgd_update_flat(
            layer.biases.ravel(), np.ascontiguousarray(db).ravel(), lr
        )
    return net


def _loss_value(net, x, labels, masks, training):
    """Forward plus cross entropy without keeping a cache."""
    a = x
    for i, layer in enumerate(net.layers):
        a = backends.affine(a, layer.weights, layer.biases)
        if layer.activation == RELU:
            a = backends.relu(a)
        if training and masks[i] is not None:
            a = backends.elementwise_mul(a, masks[i])
    _, losses, _ = backends.softmax_ce(a, labels)
    return float(losses[0])


def grad_check(net, x, label, epsilon=1e-5, rng=None):
    """Compare reverse-mode gradients against central finite differences.

    The per-sample loss at ``x``/``label`` is treated as a deterministic
    function of the parameters: when the net has dropout, one set of
    train-mode masks is drawn up front and reused for every evaluation.
    Masks come from ``rng`` when given, otherwise from a fixed internal
    seed.

    Returns the max over parameters of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-10).
    """
    epsilon = float(epsilon)
    if epsilon <= 0.0:
        raise BadDomainError("epsilon must be positive, got %r" % epsilon)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatchError("expected a 1-d input, got shape %r" % (x.shape,))
    x2 = np.ascontiguousarray(x.reshape(1, -1))
    if x2.shape[1] != net.layers[0].in_dim:
        raise DimensionMismatchError(
            "expected input width %d, got %d" % (net.layers[0].in_dim, x2.shape[1])
        )
    labels = np.array([label], dtype=np.int64)

    training = any(l.dropout_p > 0.0 for l in net.layers)
    masks = [None] * len(net.layers)
    if training:
        if rng is None:
            rng = make_rng(derive_seed(0, "grad-check-masks"))
        for i, layer in enumerate(net.layers):
            if layer.dropout_p > 0.0:
                masks[i] = sample_dropout_mask(rng, (1, layer.out_dim), layer.dropout_p)

    logits, cache = forward_batch(net, x2, training=training, masks=masks)
    _, _, dlogits = softmax_cross_entropy_batch(logits, labels)
    grads = backward(net, cache, dlogits)

    worst = 0.0
    for layer, (dw, db) in zip(net.layers, grads):
        for params, analytic in ((layer.weights, dw), (layer.biases, db)):
            flat = params.ravel()
            aflat = analytic.ravel()
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + epsilon
                lp = _loss_value(net, x2, labels, masks, training)
                flat[idx] = orig - epsilon
                lm = _loss_value(net, x2, labels, masks, training)
                flat[idx] = orig
                numeric = (lp - lm) / (2.0 * epsilon)
                a = float(aflat[idx])
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-10)
                if err > worst:
                    worst = err
    return worst
