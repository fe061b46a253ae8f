"""NHWC tensor ops with hand-written backward passes.

Every forward returns ``(out, cache)``; the matching ``*_backward`` takes the
upstream gradient and that cache. Ops run in the dtype of their inputs, so
the same code serves float32 training and float64 gradient checking.

Convolutions use "same" padding, so outputs are ``ceil(h / s)`` x ``ceil(w / s)``.
"""

import contextlib
import math

import numpy as np

from ..errors import ShapeError

_counters = []


@contextlib.contextmanager
def count_mults():
    """Tally the scalar multiplications done by conv, depthwise and dense ops.

    >>> with count_mults() as c:
    ...     _ = dense(np.ones((1, 3)), np.ones((3, 2)), None)
    >>> c["mults"]
    6
    """
    counter = {"mults": 0}
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


def _tally(n):
    for c in _counters:
        c["mults"] += int(n)


def same_padding(size, k, stride):
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def _pad(x, k, stride):
    _, h, w, _ = x.shape
    ho, top, bottom = same_padding(h, k, stride)
    wo, left, right = same_padding(w, k, stride)
    if top or bottom or left or right:
        x = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    return x, ho, wo, (top, left)


def _window(xp, i, j, stride, ho, wo):
    return xp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]


# -- dense convolution -------------------------------------------------------


def conv2d(x, w, stride=1):
    """``w`` has shape (k, k, cin, cout); no bias."""
    if x.ndim != 4 or w.ndim != 4 or w.shape[0] != w.shape[1]:
        raise ShapeError(f"conv2d: bad shapes x{x.shape} w{w.shape}")
    if x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d: {x.shape[3]} input channels, weights expect {w.shape[2]}")
    k, _, cin, cout = w.shape
    n = x.shape[0]
    xp, ho, wo, pads = _pad(x, k, stride)
    y = np.zeros((n, ho, wo, cout), dtype=np.result_type(x, w))
    for i in range(k):
        for j in range(k):
            xs = _window(xp, i, j, stride, ho, wo)
            y += xs @ w[i, j]
            _tally(xs.shape[0] * xs.shape[1] * xs.shape[2] * cin * cout)
    return y, (x.shape, xp, w, stride, pads)


def conv2d_backward(dy, cache):
    x_shape, xp, w, stride, (top, left) = cache
    k, _, cin, cout = w.shape
    _, ho, wo, _ = dy.shape
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    dy2 = dy.reshape(-1, cout)
    for i in range(k):
        for j in range(k):
            xs = _window(xp, i, j, stride, ho, wo)
            dw[i, j] = xs.reshape(-1, cin).T @ dy2
            _window(dxp, i, j, stride, ho, wo)[...] += dy @ w[i, j].T
    h, wd = x_shape[1], x_shape[2]
    return dxp[:, top:top + h, left:left + wd, :], dw


# -- depthwise convolution ---------------------------------------------------


def depthwise_conv(x, w, stride=1):
    """Per-channel spatial filter; ``w`` has shape (k, k, c)."""
    if x.ndim != 4 or w.ndim != 3 or w.shape[0] != w.shape[1]:
        raise ShapeError(f"depthwise_conv: bad shapes x{x.shape} w{w.shape}")
    if x.shape[3] != w.shape[2]:
        raise ShapeError(f"depthwise_conv: {x.shape[3]} channels, weights expect {w.shape[2]}")
    k = w.shape[0]
    xp, ho, wo, pads = _pad(x, k, stride)
    y = np.zeros((x.shape[0], ho, wo, x.shape[3]), dtype=np.result_type(x, w))
    for i in range(k):
        for j in range(k):
            xs = _window(xp, i, j, stride, ho, wo)
            y += xs * w[i, j]
            _tally(xs.size)
    return y, (x.shape, xp, w, stride, pads)


def depthwise_conv_backward(dy, cache):
    x_shape, xp, w, stride, (top, left) = cache
    k = w.shape[0]
    _, ho, wo, _ = dy.shape
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for i in range(k):
        for j in range(k):
            xs = _window(xp, i, j, stride, ho, wo)
            dw[i, j] = (xs * dy).sum(axis=(0, 1, 2))
            _window(dxp, i, j, stride, ho, wo)[...] += dy * w[i, j]
    h, wd = x_shape[1], x_shape[2]
    return dxp[:, top:top + h, left:left + wd, :], dw


# -- batch norm --------------------------------------------------------------


def batch_norm(x, gamma, beta, running_mean, running_var, train,
               momentum=0.1, eps=1e-5):
    """Normalise over (n, h, w) per channel.

    In train mode the running statistics are updated in place.
    """
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: {c} channels, params {gamma.shape}")
    axes = tuple(range(x.ndim - 1))
    if train:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    y = xhat * gamma + beta
    return y.astype(x.dtype, copy=False), (xhat, inv_std, gamma, train)


def batch_norm_backward(dy, cache):
    xhat, inv_std, gamma, train = cache
    axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    if not train:
        return dy * gamma * inv_std, dgamma, dbeta
    m = dy.size // dy.shape[-1]
    dx = (gamma * inv_std / m) * (m * dy - dbeta - xhat * dgamma)
    return dx.astype(dy.dtype, copy=False), dgamma, dbeta


# -- pointwise / head ops ----------------------------------------------------


def relu(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dy, mask):
    return dy * mask


def global_avg_pool(x):
    return x.mean(axis=(1, 2)), x.shape


def global_avg_pool_backward(dy, shape):
    n, h, w, c = shape
    return np.broadcast_to(dy[:, None, None, :] / (h * w), shape).copy()


def dense(x, w, b):
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense: {x.shape[-1]} inputs, weights expect {w.shape[0]}")
    _tally(x.shape[0] * w.shape[0] * w.shape[1])
    y = x @ w
    if b is not None:
        y = y + b
    return y, (x, w)


def dense_backward(dy, cache):
    x, w = cache
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean categorical cross-entropy and its gradient w.r.t. ``logits``."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -log_p[np.arange(n), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1
    return float(loss), grad / n
