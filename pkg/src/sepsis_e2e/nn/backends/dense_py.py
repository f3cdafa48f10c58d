"""Pure-numpy kernels for the dense network hot path.

Drop-in twin of the compiled extension; every function takes and returns
C-contiguous float64 arrays. Weight matrices are (out_dim, in_dim).
"""

import numpy as np

_CLAMP = 1e-12


def affine(x, w, b):
    return x @ w.T + b


def affine_backward(x, w, dy):
    dx = dy @ w
    dw = dy.T @ x
    db = dy.sum(axis=0)
    return dx, dw, db


def relu(z):
    return np.maximum(z, 0.0)


def relu_backward(z, da):
    return np.where(z > 0.0, da, 0.0)


def elementwise_mul(a, m):
    return a * m


def softmax_ce(logits, labels):
    """Row-wise stable softmax plus cross entropy.

    Returns (probs, losses, dlogits) where dlogits is the per-sample
    gradient softmax(logits) - onehot(labels), unscaled.
    """
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    rows = np.arange(labels.shape[0])
    p_true = np.clip(probs[rows, labels], _CLAMP, 1.0 - _CLAMP)
    losses = -np.log(p_true)
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    return probs, losses, dlogits


def sgd_update_flat(params, grads, lr):
    params -= lr * grads
