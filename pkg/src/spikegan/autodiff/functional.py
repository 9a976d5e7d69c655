"""Composite network primitives with fused, hand-derived backward passes."""

import numpy as np

from ..errors import DegenerateBatchError, DomainError, InvalidInputError, InvalidRateError, ShapeError
from .tensor import _check_finite, _make, as_tensor, column_sum


def softmax(x, axis=-1):
    """Max-subtracted softmax along ``axis``."""
    x = as_tensor(x)
    _check_finite(x.data, "softmax")
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward)


def cross_entropy(probs, targets):
    """Mean over rows of ``-sum(target * log(p))``.

    ``targets`` is a plain array of row distributions. Chained after
    :func:`softmax` the logit gradient is ``(p - target) / n_rows``.
    """
    probs = as_tensor(probs)
    t = np.asarray(targets, dtype=probs.dtype)
    if t.shape != probs.shape:
        raise ShapeError(f"cross_entropy: probabilities {probs.shape} vs targets {t.shape}")
    if np.any(probs.data[t > 0] <= 0):
        raise DomainError("cross_entropy: zero probability on a target class")
    n = probs.shape[0] if probs.ndim > 1 else 1
    p = probs.data
    safe = np.where(t > 0, p, 1.0)
    loss = -(t * np.log(safe)).sum() / n

    def backward(g):
        return (np.where(t > 0, -g * t / safe, 0.0) / n,)

    return _make(np.asarray(loss), (probs,), backward)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    _check_finite(x.data, "log_softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward)


def softmax_cross_entropy(logits, targets):
    """Cross-entropy straight from logits, stable for saturated rows."""
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs targets {t.shape}")
    _check_finite(logits.data, "softmax_cross_entropy")
    n = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    p = np.exp(logp)
    loss = -(t * logp).sum() / n

    def backward(g):
        return (g * (p - t) / n,)

    return _make(np.asarray(loss), (logits,), backward)


class RunningStats:
    """Mutable running mean/variance buffers for batch normalization."""

    def __init__(self, n_features, dtype=np.float64):
        self.mean = np.zeros(n_features, dtype=dtype)
        self.var = np.ones(n_features, dtype=dtype)


def batch_norm(x, gamma, beta, running, training, momentum=0.99, eps=1e-5):
    """Normalize each feature (last axis) over every other axis.

    In training mode the batch statistics are used and ``running`` is
    updated as ``momentum * running + (1 - momentum) * batch``; in inference
    mode the running statistics are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: scale/shift {gamma.shape}/{beta.shape} for {c} features")
    xd = x.data
    m = xd.size // c
    if training:
        if x.shape[0] < 2:
            raise DegenerateBatchError("batch_norm: training mode needs a batch of at least 2")
        mu = column_sum(xd) / m
        xc = xd - mu
        var = column_sum(xc * xc) / m
        running.mean *= momentum
        running.mean += (1.0 - momentum) * mu
        running.var *= momentum
        running.var += (1.0 - momentum) * var
    else:
        mu, var = running.mean, running.var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * gamma.data + beta.data
    gd = gamma.data

    def backward(g):
        gg = column_sum(g * xhat)
        gb = column_sum(g)
        if not x.requires_grad:
            return None, gg, gb
        gxhat = g * gd
        if training:
            gx = inv / m * (m * gxhat - column_sum(gxhat) - xhat * column_sum(gxhat * xhat))
        else:
            gx = gxhat * inv
        return gx, gg, gb

    return _make(out, (x, gamma, beta), backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: scale/shift {gamma.shape}/{beta.shape} for width {d}")
    xd = x.data
    avg = np.full(d, 1.0 / d, dtype=xd.dtype)

    def row_mean(a):
        # gemv is far faster than a narrow last-axis reduction
        return (a @ avg)[..., None]

    xc = xd - row_mean(xd)
    inv = 1.0 / np.sqrt(row_mean(xc * xc) + eps)
    xhat = xc * inv
    gd = gamma.data

    def backward(g):
        gg = column_sum(g * xhat)
        gb = column_sum(g)
        if not x.requires_grad:
            return None, gg, gb
        gxhat = g * gd
        gx = inv * (gxhat - row_mean(gxhat) - xhat * row_mean(gxhat * xhat))
        return gx, gg, gb

    return _make(xhat * gd + beta.data, (x, gamma, beta), backward)


def conv2d_transpose(x, kernel, stride):
    """Strided transposed convolution with "same" output size.

    ``x`` is ``(B, H, W, Cin)`` and ``kernel`` is ``(kh, kw, Cin, Cout)``;
    the result is ``(B, stride*H, stride*W, Cout)``. Each input pixel spreads
    ``kernel`` into the full output, which is then cropped symmetrically by
    ``k - stride`` (extra row/column taken from the end).
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d_transpose: expected 4-d input and kernel, got {x.shape} and {kernel.shape}")
    b, h, w, cin = x.shape
    kh, kw, kcin, cout = kernel.shape
    if kcin != cin:
        raise ShapeError(f"conv2d_transpose: input has {cin} channels, kernel expects {kcin}")
    s = int(stride)
    if kh < s or kw < s:
        raise ShapeError(f"conv2d_transpose: kernel {kh}x{kw} smaller than stride {s}")
    full_h, full_w = (h - 1) * s + kh, (w - 1) * s + kw
    top, left = (kh - s) // 2, (kw - s) // 2
    out_h, out_w = h * s, w * s
    kmat = kernel.data.transpose(2, 0, 1, 3).reshape(cin, kh * kw * cout)
    xd = x.data
    cols = (xd.reshape(-1, cin) @ kmat).reshape(b, h, w, kh, kw, cout)
    full = np.zeros((b, full_h, full_w, cout), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, i:i + (h - 1) * s + 1:s, j:j + (w - 1) * s + 1:s, :] += cols[:, :, :, i, j, :]
    out = full[:, top:top + out_h, left:left + out_w, :].copy()
    del cols, full

    def backward(g):
        gfull = np.zeros((b, full_h, full_w, cout), dtype=g.dtype)
        gfull[:, top:top + out_h, left:left + out_w, :] = g
        gcols = np.empty((b, h, w, kh, kw, cout), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gcols[:, :, :, i, j, :] = gfull[:, i:i + (h - 1) * s + 1:s, j:j + (w - 1) * s + 1:s, :]
        gcols = gcols.reshape(-1, kh * kw * cout)
        gx = (gcols @ kmat.T).reshape(xd.shape) if x.requires_grad else None
        gk = None
        if kernel.requires_grad:
            gk = (xd.reshape(-1, cin).T @ gcols).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
        return gx, gk

    return _make(out, (x, kernel), backward)


def dropout(x, rate, training, rng):
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise InvalidRateError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise InvalidInputError("training-mode dropout needs a random generator")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)

    def backward(g):
        return (g * mask,)

    return _make(x.data * mask, (x,), backward)


def scaled_dot_product_attention(q, k, v, scale=None):
    """``softmax(q k^T * scale) v`` over the last two axes, fused.

    Only the attention weights are kept for the backward pass. Returns the
    attended values and the weight array (a plain ndarray, for inspection).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} are incompatible")
    if scale is None:
        scale = 1.0 / np.sqrt(q.shape[-1])
    qd, kd, vd = q.data, k.data, v.data
    w = qd @ np.swapaxes(kd, -1, -2)
    w *= scale
    w -= w.max(axis=-1, keepdims=True)
    np.exp(w, out=w)
    w /= w.sum(axis=-1, keepdims=True)
    out = w @ vd

    def backward(g):
        gv = np.swapaxes(w, -1, -2) @ g if v.requires_grad else None
        gw = g @ np.swapaxes(vd, -1, -2)
        gw -= (gw * w).sum(axis=-1, keepdims=True)
        gw *= w
        gw *= scale
        gq = gw @ kd if q.requires_grad else None
        gk = np.swapaxes(gw, -1, -2) @ qd if k.requires_grad else None
        return gq, gk, gv

    return _make(out, (q, k, v), backward), w
