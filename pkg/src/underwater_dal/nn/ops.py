"""Forward and backward rules of the fixed op vocabulary.

Every op is a pair ``forward(inputs, params, attrs) -> (out, cache)`` and
``backward(dout, cache, attrs) -> (dinputs, dparams)``. Images are laid out (N, C, H, W);
class vectors (N, M). Reductions return 0-d arrays and average over the batch.
"""

from collections import namedtuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..lib.errors import ShapeError

PROB_FLOOR = 1e-12

Op = namedtuple("Op", ["forward", "backward", "n_inputs", "n_params"])


def _require(cond, message):
    if not cond:
        raise ShapeError(message)


def _require_4d(x, what="input"):
    _require(x.ndim == 4, f"{what} must be (N, C, H, W), got shape {x.shape}")


def conv2d_forward(inputs, params, attrs):
    (x,), (w, b) = inputs, params
    stride, pad = attrs["stride"], attrs["pad"]
    _require_4d(x)
    N, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    _require(C == Cw, f"input has {C} channels, kernel expects {Cw}")
    _require(b.shape == (O,), f"bias shape {b.shape} does not match {O} filters")
    Hp, Wp = H + 2 * pad, W + 2 * pad
    _require(Hp >= kh and Wp >= kw, f"padded input {Hp}x{Wp} smaller than kernel {kh}x{kw}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + b[np.newaxis, :, np.newaxis, np.newaxis]
    return np.ascontiguousarray(out), (x.shape, xp.shape, cols, w)


def conv2d_backward(dout, cache, attrs):
    x_shape, xp_shape, cols, w = cache
    stride, pad = attrs["stride"], attrs["pad"]
    _, _, H, W = x_shape
    _, _, kh, kw = w.shape
    Ho, Wo = dout.shape[2], dout.shape[3]
    db = dout.sum(axis=(0, 2, 3))
    dw = np.tensordot(dout, cols, axes=([0, 2, 3], [0, 2, 3]))
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(dout, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
            dxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += contrib
    dx = dxp[:, :, pad : pad + H, pad : pad + W]
    return [np.ascontiguousarray(dx)], [dw, db]


def leaky_relu_forward(inputs, params, attrs):
    (x,) = inputs
    mask = x > 0
    return np.where(mask, x, attrs["slope"] * x), mask


def leaky_relu_backward(dout, mask, attrs):
    return [np.where(mask, dout, attrs["slope"] * dout)], []


def sigmoid_forward(inputs, params, attrs):
    out = expit(inputs[0])
    return out, out


def sigmoid_backward(dout, out, attrs):
    return [dout * out * (1 - out)], []


def max_pool2d_forward(inputs, params, attrs):
    (x,) = inputs
    _require_4d(x)
    N, C, H, W = x.shape
    _require(H % 2 == 0 and W % 2 == 0, f"max_pool2d needs even spatial size, got {H}x{W}")
    windows = x.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H // 2, W // 2, 4)
    idx = windows.argmax(axis=-1)[..., np.newaxis]
    out = np.take_along_axis(windows, idx, axis=-1)[..., 0]
    return out, (x.shape, idx)


def max_pool2d_backward(dout, cache, attrs):
    (N, C, H, W), idx = cache
    g = np.zeros((N, C, H // 2, W // 2, 4), dtype=dout.dtype)
    np.put_along_axis(g, idx, dout[..., np.newaxis], axis=-1)
    dx = g.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H, W)
    return [dx], []


def upsample_nearest_forward(inputs, params, attrs):
    (x,) = inputs
    _require_4d(x)
    return x.repeat(2, axis=2).repeat(2, axis=3), x.shape


def upsample_nearest_backward(dout, shape, attrs):
    N, C, H, W = shape
    return [dout.reshape(N, C, H, 2, W, 2).sum(axis=(3, 5))], []


def concat_channels_forward(inputs, params, attrs):
    for x in inputs:
        _require_4d(x)
    ref = inputs[0].shape
    for x in inputs[1:]:
        _require(
            x.shape[0] == ref[0] and x.shape[2:] == ref[2:],
            f"concat needs equal batch and spatial dims, got {ref} and {x.shape}",
        )
    return np.concatenate(inputs, axis=1), [x.shape[1] for x in inputs]


def concat_channels_backward(dout, channels, attrs):
    return np.split(dout, np.cumsum(channels)[:-1], axis=1), []


def linear_forward(inputs, params, attrs):
    (x,), (w, b) = inputs, params
    _require(x.ndim == 2, f"linear input must be (N, F), got shape {x.shape}")
    _require(w.shape[1] == x.shape[1], f"linear expects {w.shape[1]} features, got {x.shape[1]}")
    return x @ w.T + b, (x, w)


def linear_backward(dout, cache, attrs):
    x, w = cache
    return [dout @ w], [dout.T @ x, dout.sum(axis=0)]


def softmax_forward(inputs, params, attrs):
    (x,) = inputs
    _require(x.ndim == 2, f"softmax input must be (N, M), got shape {x.shape}")
    e = np.exp(x - x.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)
    return s, s


def softmax_backward(dout, s, attrs):
    return [s * (dout - (dout * s).sum(axis=1, keepdims=True))], []


def global_avg_pool_forward(inputs, params, attrs):
    (x,) = inputs
    _require_4d(x)
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(dout, shape, attrs):
    N, C, H, W = shape
    dx = np.broadcast_to(dout[:, :, np.newaxis, np.newaxis] / (H * W), shape)
    return [np.array(dx)], []


def mse_reduce_forward(inputs, params, attrs):
    pred, target = inputs
    _require(pred.shape == target.shape, f"mse operands differ in shape: {pred.shape} vs {target.shape}")
    diff = pred - target
    return np.asarray(np.mean(diff * diff)), diff


def mse_reduce_backward(dout, diff, attrs):
    g = dout * (2.0 / diff.size) * diff
    return [g, -g], []


def _check_labels(probs, labels):
    _require(probs.ndim == 2, f"probabilities must be (N, M), got shape {probs.shape}")
    _require(labels.shape == (probs.shape[0],), f"labels shape {labels.shape} does not match batch {probs.shape[0]}")


def cross_entropy_reduce_forward(inputs, params, attrs):
    probs, labels = inputs
    _check_labels(probs, labels)
    rows = np.arange(probs.shape[0])
    p = probs[rows, labels]
    floored = np.maximum(p, PROB_FLOOR)
    return np.asarray(np.mean(-np.log(floored))), (probs.shape, rows, labels, p, floored)


def cross_entropy_reduce_backward(dout, cache, attrs):
    shape, rows, labels, p, floored = cache
    g = np.zeros(shape, dtype=np.result_type(floored, dout))
    g[rows, labels] = np.where(p > PROB_FLOOR, -1.0 / floored, 0.0) * dout / shape[0]
    return [g, None], []


def neg_entropy_reduce_forward(inputs, params, attrs):
    (probs,) = inputs
    _require(probs.ndim == 2, f"probabilities must be (N, M), got shape {probs.shape}")
    positive = probs > 0
    plogp = np.where(positive, probs * np.log(np.where(positive, probs, 1.0)), 0.0)
    return np.asarray(np.mean(plogp.sum(axis=1))), probs


def neg_entropy_reduce_backward(dout, probs, attrs):
    g = (np.log(np.maximum(probs, PROB_FLOOR)) + 1.0) * (dout / probs.shape[0])
    return [g], []


OPS = {
    "conv2d": Op(conv2d_forward, conv2d_backward, 1, 2),
    "leaky_relu": Op(leaky_relu_forward, leaky_relu_backward, 1, 0),
    "sigmoid": Op(sigmoid_forward, sigmoid_backward, 1, 0),
    "max_pool2d": Op(max_pool2d_forward, max_pool2d_backward, 1, 0),
    "upsample_nearest": Op(upsample_nearest_forward, upsample_nearest_backward, 1, 0),
    "concat_channels": Op(concat_channels_forward, concat_channels_backward, -1, 0),
    "linear": Op(linear_forward, linear_backward, 1, 2),
    "softmax": Op(softmax_forward, softmax_backward, 1, 0),
    "global_avg_pool": Op(global_avg_pool_forward, global_avg_pool_backward, 1, 0),
    "mse_reduce": Op(mse_reduce_forward, mse_reduce_backward, 2, 0),
    "cross_entropy_reduce": Op(cross_entropy_reduce_forward, cross_entropy_reduce_backward, 2, 0),
    "neg_entropy_reduce": Op(neg_entropy_reduce_forward, neg_entropy_reduce_backward, 1, 0),
}

# ops whose non-float inputs never receive a gradient
NON_DIFFERENTIABLE_INPUTS = {"cross_entropy_reduce": (1,)}
