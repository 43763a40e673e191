"""Forward/backward kernels for every layer kind.

Each ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache.  Convolutions are im2col-style:
windows are gathered with ``sliding_window_view`` and contracted with a
single matmul, and the backward pass scatters column gradients back one
kernel tap at a time (fixed order, so results are bitwise reproducible).
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError

LOG_CLIP = 1e-12


# -- padding / geometry -------------------------------------------------------

def same_padding(size, kernel, stride):
    """(before, after) zero padding for 'same'; the odd pixel goes after."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def resolve_padding(padding, h, w, kh, kw, stride):
    if padding == "valid":
        return (0, 0), (0, 0)
    if padding == "same":
        return same_padding(h, kh, stride), same_padding(w, kw, stride)
    p = int(padding)
    if p < 0:
        raise ShapeError(f"negative padding {p}")
    return (p, p), (p, p)


def conv_output_size(size, kernel, stride, pad_before, pad_after):
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    padded = size + pad_before + pad_after
    if kernel > padded:
        raise ShapeError(f"kernel {kernel} larger than padded input {padded}")
    return (padded - kernel) // stride + 1


def _pad(x, ph, pw):
    if ph == (0, 0) and pw == (0, 0):
        return x
    return np.pad(x, ((0, 0), (0, 0), ph, pw))


def _windows(xp, kh, kw, stride):
    # (N, C, Ho, Wo, kh, kw) view
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _scatter_windows(dwin, xp_shape, stride):
    """Adjoint of ``_windows``: accumulate (N,C,Ho,Wo,kh,kw) into a padded input."""
    n, c, ho, wo, kh, kw = dwin.shape
    dxp = np.zeros(xp_shape)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dwin[:, :, :, :, i, j]
    return dxp


def _unpad(dxp, ph, pw):
    h = dxp.shape[2] - ph[0] - ph[1]
    w = dxp.shape[3] - pw[0] - pw[1]
    return dxp[:, :, ph[0]:ph[0] + h, pw[0]:pw[0] + w]


# -- convolution -------------------------------------------------------------

def conv2d_forward(x, weight, bias, stride=1, padding="valid"):
    """Cross-correlation of ``x`` (N,C,H,W) with ``weight`` (F,C,kh,kw)."""
    n, c, h, w = x.shape
    f, cw, kh, kw = weight.shape
    if cw != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {cw}")
    ph, pw = resolve_padding(padding, h, w, kh, kw, stride)
    ho = conv_output_size(h, kh, stride, *ph)
    wo = conv_output_size(w, kw, stride, *pw)
    xp = _pad(x, ph, pw)
    cols = _windows(xp, kh, kw, stride).transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = cols @ weight.reshape(f, -1).T + bias
    out = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    cache = (cols, xp.shape, weight, stride, ph, pw, (n, c, ho, wo, kh, kw))
    return np.ascontiguousarray(out), cache


def conv2d_backward(dout, cache):
    cols, xp_shape, weight, stride, ph, pw, (n, c, ho, wo, kh, kw) = cache
    f = weight.shape[0]
    dmat = dout.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
    dw = (dmat.T @ cols).reshape(weight.shape)
    db = dmat.sum(axis=0)
    dcols = (dmat @ weight.reshape(f, -1)).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    dx = _unpad(_scatter_windows(dcols, xp_shape, stride), ph, pw)
    return dx, dw, db


def depthwise_sep_conv_forward(x, depthwise, pointwise, bias, stride=1, padding="valid"):
    """Per-channel spatial conv (C,kh,kw) followed by a 1x1 mix (F,C) plus bias (F)."""
    n, c, h, w = x.shape
    cd, kh, kw = depthwise.shape
    if cd != c or pointwise.shape[1] != c:
        raise ShapeError(f"depthwise-separable conv: input has {c} channels, factors expect {cd}/{pointwise.shape[1]}")
    ph, pw = resolve_padding(padding, h, w, kh, kw, stride)
    ho = conv_output_size(h, kh, stride, *ph)
    wo = conv_output_size(w, kw, stride, *pw)
    xp = _pad(x, ph, pw)
    win = _windows(xp, kh, kw, stride)
    mid = np.einsum("nchwij,cij->nchw", win, depthwise)
    out = np.einsum("nchw,fc->nfhw", mid, pointwise) + bias[None, :, None, None]
    return out, (win, mid, xp.shape, depthwise, pointwise, stride, ph, pw)


def depthwise_sep_conv_backward(dout, cache):
    win, mid, xp_shape, depthwise, pointwise, stride, ph, pw = cache
    db = dout.sum(axis=(0, 2, 3))
    dpoint = np.einsum("nfhw,nchw->fc", dout, mid)
    dmid = np.einsum("nfhw,fc->nchw", dout, pointwise)
    ddepth = np.einsum("nchw,nchwij->cij", dmid, win)
    dwin = dmid[:, :, :, :, None, None] * depthwise[None, :, None, None, :, :]
    dx = _unpad(_scatter_windows(dwin, xp_shape, stride), ph, pw)
    return dx, ddepth, dpoint, db


# -- pooling -----------------------------------------------------------------

def maxpool2d_forward(x, window=(2, 2), stride=None):
    kh, kw = window
    sh, sw = stride if stride is not None else window
    n, c, h, w = x.shape
    if kh > h or kw > w:
        raise ShapeError(f"pool window {window} exceeds input extents {(h, w)}")
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, ho, wo, kh * kw)
    idx = np.argmax(flat, axis=-1)  # first maximum wins ties
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx, (kh, kw), (sh, sw))


def maxpool2d_backward(dout, cache):
    x_shape, idx, (kh, kw), (sh, sw) = cache
    n, c, ho, wo = idx.shape
    di, dj = np.divmod(idx, kw)
    rows = np.arange(ho)[None, None, :, None] * sh + di
    cols = np.arange(wo)[None, None, None, :] * sw + dj
    nn = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, :, None, None]
    dx = np.zeros(x_shape)
    np.add.at(dx, (nn, cc, rows, cols), dout)
    return dx


def global_avg_pool_forward(x):
    n, c, h, w = x.shape
    if h * w == 0:
        raise ShapeError("global average pool over an empty spatial extent")
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(dout, x_shape):
    n, c, h, w = x_shape
    return np.broadcast_to((dout / (h * w))[:, :, None, None], x_shape).copy()


# -- normalization -----------------------------------------------------------

def _bn_axes(x):
    if x.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    if x.ndim == 2:
        return (0,), (1, -1)
    raise ShapeError(f"batch norm expects 2-d or 4-d input, got {x.shape}")


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, momentum=0.1, eps=1e-5):
    """Batch norm over every axis except 1.

    In train mode ``running_mean``/``running_var`` are updated in place.
    """
    axes, bshape = _bn_axes(x)
    if train:
        count = x.size // x.shape[1]
        if count < 1:
            raise ShapeError("batch norm needs at least one value per channel")
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.reshape(bshape) * xhat + beta.reshape(bshape)
    return out, (xhat, inv_std, gamma, axes, bshape, train)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, axes, bshape, train = cache
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma.reshape(bshape)
    if not train:
        return dxhat * inv_std.reshape(bshape), dgamma, dbeta
    m = xhat.size // xhat.shape[1]
    dx = (inv_std.reshape(bshape) / m) * (
        m * dxhat
        - dxhat.sum(axis=axes).reshape(bshape)
        - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
    )
    return dx, dgamma, dbeta


# -- dense / activations -----------------------------------------------------

def dense_forward(x, weight, bias):
    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    return x @ weight + bias, x


def dense_backward(dout, x, weight):
    return dout @ weight.T, x.T @ dout, dout.sum(axis=0)


def relu_forward(x):
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward(dout, mask):
    return np.where(mask, dout, 0.0)


def softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[-1] < 1:
        raise ShapeError("softmax over zero classes")
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("softmax received non-finite logits")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dout, probs):
    return probs * (dout - (dout * probs).sum(axis=-1, keepdims=True))


def cross_entropy_loss(probs, targets):
    """Mean categorical cross entropy and its gradient w.r.t. the logits.

    ``targets`` may be one-hot rows (N,K) or integer class indices (N,).
    The gradient assumes ``probs`` came out of a softmax: (probs - onehot)/N.
    """
    probs = np.asarray(probs, dtype=np.float64)
    n, k = probs.shape
    targets = np.asarray(targets)
    if targets.ndim == 1:
        if np.any(targets < 0) or np.any(targets >= k):
            raise IndexError(f"target index out of range for {k} classes")
        onehot = np.zeros((n, k))
        onehot[np.arange(n), targets.astype(np.int64)] = 1.0
    else:
        if targets.shape != probs.shape:
            raise ShapeError(f"targets {targets.shape} do not match probabilities {probs.shape}")
        onehot = targets.astype(np.float64)
    picked = (probs * onehot).sum(axis=1)
    loss = -np.mean(np.log(np.clip(picked, LOG_CLIP, 1.0)))
    return float(loss), (probs - onehot) / n


def dropout_forward(x, p, train, rng):
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def concat_forward(xs, axis=1):
    if not xs:
        raise ShapeError("concat of nothing")
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(x.shape, ref)) if i != axis % len(ref)):
            raise ShapeError(f"concat: shapes {ref} and {x.shape} differ off axis {axis}")
    sizes = [x.shape[axis] for x in xs]
    return np.concatenate(xs, axis=axis), sizes


def concat_backward(dout, sizes, axis=1):
    return np.split(dout, np.cumsum(sizes)[:-1], axis=axis)


def glorot_limit(fan_in, fan_out):
    return math.sqrt(6.0 / (fan_in + fan_out))
