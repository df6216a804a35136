"""Forward/backward kernels for the fixed model zoo.

Image tensors are NHWC. Convolution weights are ``(kh, kw, c_in, c_out)``;
``conv2d_transpose`` takes the same weight layout and is the exact adjoint of
``conv2d`` with that weight, so it maps ``c_out`` channels back to ``c_in``.

Every kernel comes as a ``*_fwd`` returning ``(out, cache)`` plus a matching
``*_bwd(dout, cache)``; the plain names are convenience wrappers. All outputs
are checked for NaN/Inf.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NumericalError, ShapeError


def check_finite(x, op: str):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{op}: non-finite values in output")
    return x


def _conv_out(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def _im2col(x, kh, kw, stride, padding):
    """(N,H,W,C) -> (N*Ho*Wo, kh*kw*C), columns ordered (i, j, c)."""
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    v = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    n, ho, wo = v.shape[:3]
    # channel-innermost copy is much faster than the view's natural order
    return v.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, -1), (ho, wo)


def _col2im(cols, shape, kh, kw, stride, padding):
    """Adjoint of :func:`_im2col`: scatter-add columns back to (N,H,W,C)."""
    n, h, w, c = shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    if c >= 8 and kh % stride == 0 and kw % stride == 0:
        return _col2im_phased(cols, shape, kh, kw, stride, padding, ho, wo)
    dc = cols.reshape(n, ho, wo, kh, kw, c)
    out = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dc[:, :, :, i, j]
    return out[:, padding:hp - padding, padding:wp - padding]


def _col2im_phased(cols, shape, kh, kw, s, p, ho, wo):
    # split kernel offset i = s*a + r: 4 block adds instead of kh*kw strided ones
    n, h, w, c = shape
    ka, kb = kh // s, kw // s
    qh, qw = -(-(h + 2 * p) // s), -(-(w + 2 * p) // s)
    out = np.zeros((n, qh, s, qw, s, c), dtype=cols.dtype)
    dc = cols.reshape(n, ho, wo, ka, s, kb, s, c)
    for a in range(ka):
        for b in range(kb):
            out[:, a:a + ho, :, b:b + wo] += dc[:, :, :, a, :, b].transpose(0, 1, 3, 2, 4, 5)
    return out.reshape(n, qh * s, qw * s, c)[:, p:p + h, p:p + w]


def _wmat(w):
    return w.reshape(-1, w.shape[3])


def _wmat_back(gm, shape):
    return gm.reshape(shape)


def _check_conv(op, x, w, b):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(op, x.shape, w.shape, "expected NHWC input and 4-d weights")
    if b is not None and b.shape != (w.shape[3],):
        raise ShapeError(op, w.shape, b.shape, "bias must match output channels")


def conv2d_fwd(x, w, b=None, stride=1, padding=0):
    _check_conv("conv2d", x, w, b)
    if x.shape[3] != w.shape[2]:
        raise ShapeError("conv2d", x.shape, w.shape, "input channels != weight c_in")
    kh, kw = w.shape[:2]
    if _conv_out(x.shape[1], kh, stride, padding) < 1 or _conv_out(x.shape[2], kw, stride, padding) < 1:
        raise ShapeError("conv2d", x.shape, w.shape, "kernel larger than padded input")
    cols, (ho, wo) = _im2col(x, kh, kw, stride, padding)
    out = cols @ _wmat(w)
    if b is not None:
        out += b
    out = out.reshape(x.shape[0], ho, wo, w.shape[3])
    return check_finite(out, "conv2d"), (cols, x.shape, w, b is not None, stride, padding)


def conv2d_bwd(dout, cache):
    cols, xshape, w, has_b, stride, padding = cache
    g = dout.reshape(-1, w.shape[3])
    dw = _wmat_back(cols.T @ g, w.shape)
    dx = _col2im(g @ _wmat(w).T, xshape, w.shape[0], w.shape[1], stride, padding)
    db = g.sum(axis=0) if has_b else None
    return dx, dw, db


def conv2d(x, w, b=None, stride=1, padding=0):
    return conv2d_fwd(x, w, b, stride, padding)[0]


def conv2d_grad(dout, x, w, b=None, stride=1, padding=0):
    """Returns ``(dx, dw, db)`` for ``conv2d(x, w, b, stride, padding)``."""
    return conv2d_bwd(dout, conv2d_fwd(x, w, b, stride, padding)[1])


def conv2d_transpose_fwd(y, w, b=None, stride=1, padding=0, out_hw=None):
    _check_conv("conv2d_transpose", y, w, None)
    if y.shape[3] != w.shape[3]:
        raise ShapeError("conv2d_transpose", y.shape, w.shape, "input channels != weight c_out")
    if b is not None and b.shape != (w.shape[2],):
        raise ShapeError("conv2d_transpose", w.shape, b.shape, "bias must match output channels")
    kh, kw, ci, _ = w.shape
    n, ho, wo, _ = y.shape
    if out_hw is None:
        out_hw = ((ho - 1) * stride - 2 * padding + kh, (wo - 1) * stride - 2 * padding + kw)
    if (_conv_out(out_hw[0], kh, stride, padding), _conv_out(out_hw[1], kw, stride, padding)) != (ho, wo):
        raise ShapeError("conv2d_transpose", y.shape, w.shape, f"cannot produce spatial size {out_hw}")
    yf = y.reshape(-1, w.shape[3])
    xshape = (n, out_hw[0], out_hw[1], ci)
    out = _col2im(yf @ _wmat(w).T, xshape, kh, kw, stride, padding)
    if b is not None:
        out = out + b
    return check_finite(out, "conv2d_transpose"), (yf, y.shape, w, b is not None, stride, padding)


def conv2d_transpose_bwd(dout, cache):
    yf, yshape, w, has_b, stride, padding = cache
    cols, _ = _im2col(dout, w.shape[0], w.shape[1], stride, padding)
    dy = (cols @ _wmat(w)).reshape(yshape)
    dw = _wmat_back(cols.T @ yf, w.shape)
    db = dout.sum(axis=(0, 1, 2)) if has_b else None
    return dy, dw, db


def conv2d_transpose(y, w, b=None, stride=1, padding=0, out_hw=None):
    return conv2d_transpose_fwd(y, w, b, stride, padding, out_hw)[0]


def conv2d_transpose_grad(dout, y, w, b=None, stride=1, padding=0, out_hw=None):
    return conv2d_transpose_bwd(dout, conv2d_transpose_fwd(y, w, b, stride, padding, out_hw)[1])


def dense_fwd(x, w, b=None):
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError("dense", x.shape, w.shape)
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError("dense", w.shape, b.shape, "bias must match output width")
    out = x @ w
    if b is not None:
        out += b
    return check_finite(out, "dense"), (x, w, b is not None)


def dense_bwd(dout, cache):
    x, w, has_b = cache
    return dout @ w.T, x.T @ dout, (dout.sum(axis=0) if has_b else None)


def dense(x, w, b=None):
    return dense_fwd(x, w, b)[0]


def dense_grad(dout, x, w, b=None):
    return dense_bwd(dout, (x, w, b is not None))


def relu(x):
    return np.maximum(x, 0)


def relu_grad(dout, x):
    return dout * (x > 0)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_grad(dout, y):
    """Gradient given the sigmoid *output* ``y``."""
    return dout * y * (1 - y)


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_grad(dout, y, axis=-1):
    """Gradient given the softmax *output* ``y``."""
    return y * (dout - (dout * y).sum(axis=axis, keepdims=True))


def log_softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels``; returns ``(loss, dlogits)``."""
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    return float(check_finite(loss, "softmax_cross_entropy")), grad / n


_BCE_EPS = 1e-7


def bce_sum(pred, target):
    """Summed binary cross-entropy of probabilities ``pred`` against ``target``."""
    if pred.shape != target.shape:
        raise ShapeError("bce_sum", pred.shape, target.shape)
    p = np.clip(pred, _BCE_EPS, 1 - _BCE_EPS)
    val = -np.sum(target * np.log(p) + (1 - target) * np.log1p(-p))
    return float(check_finite(val, "bce_sum"))


def bce_sum_grad(pred, target):
    p = np.clip(pred, _BCE_EPS, 1 - _BCE_EPS)
    return (p - target) / (p * (1 - p))


def bce_logits_sum(logits, target):
    """``bce_sum(sigmoid(logits), target)`` computed stably from logits."""
    if logits.shape != target.shape:
        raise ShapeError("bce_logits_sum", logits.shape, target.shape)
    val = np.sum(np.logaddexp(0, logits) - target * logits)
    return float(check_finite(val, "bce_logits_sum"))


def bce_logits_sum_grad(logits, target):
    return sigmoid(logits) - target


def gaussian_kl(mu, logvar):
    """Summed KL(N(mu, exp(logvar)) || N(0, 1))."""
    if mu.shape != logvar.shape:
        raise ShapeError("gaussian_kl", mu.shape, logvar.shape)
    with np.errstate(over="ignore"):
        val = 0.5 * np.sum(mu * mu + np.exp(logvar) - logvar - 1)
    return float(check_finite(val, "gaussian_kl"))


def gaussian_kl_grad(mu, logvar):
    """Returns ``(dmu, dlogvar)``."""
    return mu, 0.5 * (np.exp(logvar) - 1)


def squared_error_sum(pred, target):
    if pred.shape != target.shape:
        raise ShapeError("squared_error_sum", pred.shape, target.shape)
    return float(np.sum((pred - target) ** 2))


def squared_error_sum_grad(pred, target):
    return 2 * (pred - target)
