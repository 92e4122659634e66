"""Differentiable primitives.

Every function here computes a numpy forward pass and, when tracking is on
and an input requires gradients, attaches a Node carrying the matching
vector-Jacobian product. All primitives preserve the input dtype
(float64 by default, float32 selectable at tensor creation) and produce
finite outputs for finite in-contract inputs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from .errors import ContractError, DimensionError
from .tensor import Node, Tensor, grad_enabled

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

BCE_PROB_CLAMP = 1e-7


def _astensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _result(data: np.ndarray, inputs, vjp, op: str) -> Tensor:
    track = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        out.node = Node(op, inputs, out, vjp)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


# ---------------------------------------------------------------------------
# element-wise arithmetic

def add(a, b) -> Tensor:
    a = _astensor(a)
    b = _astensor(b, like=a)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(out, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a = _astensor(a)
    b = _astensor(b, like=a)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(out, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a = _astensor(a)
    b = _astensor(b, like=a)
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _result(out, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a = _astensor(a)
    b = _astensor(b, like=a)
    out = a.data / b.data

    def vjp(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(out, (a, b), vjp, "div")


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Tensor:
    a = _astensor(a)
    b = _astensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), vjp, "matmul")


# ---------------------------------------------------------------------------
# convolution and pooling

def conv2d(x, kernel, *, stride=1, padding=0, groups: int = 1) -> Tensor:
    """Grouped, strided, padded cross-correlation.

    ``x`` is NxCxHxW, ``kernel`` is Ox(C/g)xKhxKw. groups=C with O=C gives a
    depthwise convolution; a 1x1 kernel with groups=1 gives a pointwise one.
    """
    x = _astensor(x)
    kernel = _astensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(
            f"conv2d: expected 4-d input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    o, cg, kh, kw = kernel.shape
    g = int(groups)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if g < 1 or c % g != 0 or o % g != 0:
        raise DimensionError(
            f"conv2d: channels {c} and filters {o} must both divide groups {g}")
    if cg != c // g:
        raise DimensionError(
            f"conv2d: kernel expects {cg} channels per group, input supplies {c // g}")
    hp, wp = h + 2 * ph, w + 2 * pw
    if kh > hp or kw > wp or kh < 1 or kw < 1:
        raise DimensionError(
            f"conv2d: kernel {kh}x{kw} does not fit padded input {hp}x{wp}")
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    og = o // g

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) \
        if (ph or pw) else x.data
    kd = kernel.data

    pointwise = kh == 1 and kw == 1 and g == 1 and ph == 0 and pw == 0
    depthwise = g == c and o == c and cg == 1
    if pointwise:
        # a 1x1 kernel is a channel-mixing matmul at each retained pixel
        xs = x.data[:, :, ::sh, ::sw]
        k2 = kd.reshape(o, c)
        out = np.tensordot(xs, k2, axes=([1], [1])).transpose(0, 3, 1, 2)
        win = None
    elif depthwise:
        # per-tap shifted accumulation; beats window gathering when the
        # output map is small relative to the kernel footprint
        out = np.zeros((n, c, ho, wo), dtype=x.data.dtype)
        for i in range(kh):
            for j in range(kw):
                out += xp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] \
                    * kd[:, 0, i, j][None, :, None, None]
        win = None
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
        if g == 1:
            cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
            out = (cols @ kd.reshape(o, -1).T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
        else:
            out = np.empty((n, o, ho, wo), dtype=x.data.dtype)
            for gi in range(g):
                cs, os_ = gi * cg, gi * og
                cols = win[:, cs:cs + cg].transpose(0, 2, 3, 1, 4, 5).reshape(
                    n * ho * wo, cg * kh * kw)
                out[:, os_:os_ + og] = (cols @ kd[os_:os_ + og].reshape(og, -1).T) \
                    .reshape(n, ho, wo, og).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def vjp(gout):
        gk = None
        gx = None
        if pointwise:
            if kernel.requires_grad:
                gk = np.tensordot(gout, xs, axes=([0, 2, 3], [0, 2, 3])) \
                    .reshape(o, c, 1, 1)
            if x.requires_grad:
                gxs = np.tensordot(gout, k2, axes=([1], [0])).transpose(0, 3, 1, 2)
                if sh == 1 and sw == 1:
                    gx = np.ascontiguousarray(gxs)
                else:
                    gx = np.zeros_like(x.data)
                    gx[:, :, ::sh, ::sw] = gxs
            return gx, gk
        if kernel.requires_grad:
            if depthwise:
                gk = np.empty_like(kd)
                for i in range(kh):
                    for j in range(kw):
                        gk[:, 0, i, j] = (
                            gout * xp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw]
                        ).sum(axis=(0, 2, 3))
            else:
                gk = np.empty_like(kd)
                for gi in range(g):
                    cs, os_ = gi * cg, gi * og
                    cols = win[:, cs:cs + cg].transpose(0, 2, 3, 1, 4, 5).reshape(
                        n * ho * wo, cg * kh * kw)
                    gcols = gout[:, os_:os_ + og].transpose(0, 2, 3, 1).reshape(
                        n * ho * wo, og)
                    gk[os_:os_ + og] = (gcols.T @ cols).reshape(og, cg, kh, kw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            if depthwise:
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += \
                            gout * kd[:, 0, i, j][None, :, None, None]
            else:
                for gi in range(g):
                    cs, os_ = gi * cg, gi * og
                    gcols = gout[:, os_:os_ + og].transpose(0, 2, 3, 1).reshape(
                        n * ho * wo, og)
                    dcols = (gcols @ kd[os_:os_ + og].reshape(og, -1)).reshape(
                        n, ho, wo, cg, kh, kw)
                    for i in range(kh):
                        for j in range(kw):
                            gxp[:, cs:cs + cg, i:i + sh * ho:sh, j:j + sw * wo:sw] += \
                                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, ph:ph + h, pw:pw + w] if (ph or pw) else gxp
        return gx, gk

    return _result(out, (x, kernel), vjp, "conv2d")


def avg_pool2d(x, k, *, stride=None, padding=0) -> Tensor:
    """Window mean over NxCxHxW; padded positions are excluded from the divisor."""
    x = _astensor(x)
    if x.ndim != 4:
        raise DimensionError(f"avg_pool2d: expected 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    kh, kw = _pair(k)
    sh, sw = _pair(stride if stride is not None else k)
    ph, pw = _pair(padding)
    hp, wp = h + 2 * ph, w + 2 * pw
    if kh > hp or kw > wp or kh < 1 or kw < 1:
        raise DimensionError(f"avg_pool2d: window {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    sums = win.sum(axis=(-2, -1))
    ones = np.pad(np.ones((h, w), dtype=x.data.dtype), ((ph, ph), (pw, pw)))
    counts = sliding_window_view(ones, (kh, kw))[::sh, ::sw].sum(axis=(-2, -1))
    out = sums / counts

    def vjp(g):
        share = g / counts
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += share
        gx = gxp[:, :, ph:ph + h, pw:pw + w] if (ph or pw) else gxp
        return (gx,)

    return _result(out, (x,), vjp, "avg_pool2d")


def global_avg_pool(x) -> Tensor:
    """Mean over the spatial dimensions: NxCxHxW -> NxC."""
    x = _astensor(x)
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool: expected 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def vjp(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return _result(out, (x,), vjp, "global_avg_pool")


# ---------------------------------------------------------------------------
# normalization

def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


def layer_norm(x, gamma, beta, *, axes=-1, eps: float = 1e-5) -> Tensor:
    """Normalize over ``axes`` then apply a broadcastable affine transform."""
    x = _astensor(x)
    gamma = _astensor(gamma)
    beta = _astensor(beta)
    ax = _norm_axes(axes, x.ndim)
    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def vjp(g):
        dxhat = g * gamma.data
        gx = None
        if x.requires_grad:
            gx = inv * (dxhat
                        - dxhat.mean(axis=ax, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=ax, keepdims=True))
        ggamma = _unbroadcast(g * xhat, gamma.shape) if gamma.requires_grad else None
        gbeta = _unbroadcast(g, beta.shape) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return _result(out, (x, gamma, beta), vjp, "layer_norm")


def batch_norm(x, gamma, beta, running_mean, running_var, *, training: bool,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over NxC or NxCxHxW input.

    Training mode normalizes with batch statistics (biased variance) and
    updates the running buffers in place with the given momentum; eval mode
    normalizes with the running statistics. The running buffers are
    non-differentiable state.
    """
    x = _astensor(x)
    gamma, beta = _astensor(gamma), _astensor(beta)
    if x.ndim not in (2, 4):
        raise DimensionError(f"batch_norm: expected 2-d or 4-d input, got {x.shape}")
    c = x.shape[1]
    ax = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if x.ndim == 2 else (1, c, 1, 1)
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: affine parameters must have shape ({c},)")

    if training:
        bm = x.data.mean(axis=ax)
        bv = x.data.var(axis=ax)
        m = x.data.size // c
        # normalize with the biased variance, track the unbiased estimate
        bv_run = bv * (m / (m - 1.0)) if m > 1 else bv
        running_mean.data[...] = (1.0 - momentum) * running_mean.data + momentum * bm
        running_var.data[...] = (1.0 - momentum) * running_var.data + momentum * bv_run
        inv = (1.0 / np.sqrt(bv + eps)).reshape(bshape)
        xhat = (x.data - bm.reshape(bshape)) * inv
    else:
        inv = (1.0 / np.sqrt(running_var.data + eps)).reshape(bshape)
        xhat = (x.data - running_mean.data.reshape(bshape)) * inv
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def vjp(g):
        gr = gamma.data.reshape(bshape)
        gx = None
        if x.requires_grad:
            dxhat = g * gr
            if training:
                gx = inv * (dxhat
                            - dxhat.mean(axis=ax, keepdims=True)
                            - xhat * (dxhat * xhat).mean(axis=ax, keepdims=True))
            else:
                gx = dxhat * inv
        ggamma = (g * xhat).sum(axis=ax) if gamma.requires_grad else None
        gbeta = g.sum(axis=ax) if beta.requires_grad else None
        return gx, ggamma, gbeta, None, None

    return _result(out, (x, gamma, beta, running_mean, running_var), vjp, "batch_norm")


# ---------------------------------------------------------------------------
# nonlinearities

def gelu(x) -> Tensor:
    """Exact Gaussian-CDF GELU: x * Phi(x)."""
    x = _astensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def vjp(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    return _result(out, (x,), vjp, "gelu")


def sigmoid(x) -> Tensor:
    x = _astensor(x)
    out = expit(x.data)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), vjp, "sigmoid")


def softplus(x) -> Tensor:
    """log(1 + exp(x)) computed without overflow."""
    x = _astensor(x)
    out = np.logaddexp(np.zeros((), dtype=x.data.dtype), x.data)

    def vjp(g):
        return (g * expit(x.data),)

    return _result(out, (x,), vjp, "softplus")


def sqrt(x) -> Tensor:
    x = _astensor(x)
    if np.any(x.data < 0):
        raise ContractError("sqrt: negative input")
    out = np.sqrt(x.data)

    def vjp(g):
        return (g * 0.5 / out,)

    return _result(out, (x,), vjp, "sqrt")


# ---------------------------------------------------------------------------
# shape manipulation and reductions

def reshape(x, shape) -> Tensor:
    x = _astensor(x)
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return _result(out, (x,), vjp, "reshape")


def transpose(x, axes=None) -> Tensor:
    x = _astensor(x)
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def vjp(g):
        return (np.transpose(g, inv),)

    return _result(out, (x,), vjp, "transpose")


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _astensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            ax = (axis,) if isinstance(axis, int) else axis
            g = np.expand_dims(g, tuple(a % x.ndim for a in ax))
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(out, (x,), vjp, "reduce_sum")


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _astensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.size if axis is None else int(np.prod(
        [x.shape[a % x.ndim] for a in ((axis,) if isinstance(axis, int) else axis)]))

    def vjp(g):
        if axis is not None and not keepdims:
            ax = (axis,) if isinstance(axis, int) else axis
            g = np.expand_dims(g, tuple(a % x.ndim for a in ax))
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _result(out, (x,), vjp, "reduce_mean")


# ---------------------------------------------------------------------------
# fused multi-label loss elements

def bce_with_logits(logits, targets) -> Tensor:
    """Element-wise binary cross-entropy on logits.

    Probabilities are clamped to [1e-7, 1 - 1e-7] so single-element losses
    are bounded by -log(1e-7); the gradient is (sigmoid(x) - y) wherever the
    clamp is inactive and zero where it saturates. ``targets`` is
    non-differentiable.
    """
    logits = _astensor(logits)
    targets = _astensor(targets, like=logits)
    if logits.shape != targets.shape:
        raise DimensionError(
            f"bce_with_logits: logits {logits.shape} vs targets {targets.shape}")
    r = expit(logits.data)
    rc = np.clip(r, BCE_PROB_CLAMP, 1.0 - BCE_PROB_CLAMP)
    y = targets.data
    out = -(y * np.log(rc) + (1.0 - y) * np.log1p(-rc))

    def vjp(g):
        mask = (r > BCE_PROB_CLAMP) & (r < 1.0 - BCE_PROB_CLAMP)
        return (g * (r - y) * mask, None)

    return _result(out, (logits, targets), vjp, "bce_with_logits")


# ---------------------------------------------------------------------------
# operator sugar on Tensor

def _neg(self):
    return mul(self, -1.0)


Tensor.__add__ = lambda self, o: add(self, o)
Tensor.__radd__ = lambda self, o: add(self, o)
Tensor.__sub__ = lambda self, o: sub(self, o)
Tensor.__rsub__ = lambda self, o: sub(_astensor(o, like=self), self)
Tensor.__mul__ = lambda self, o: mul(self, o)
Tensor.__rmul__ = lambda self, o: mul(self, o)
Tensor.__truediv__ = lambda self, o: div(self, o)
Tensor.__rtruediv__ = lambda self, o: div(_astensor(o, like=self), self)
Tensor.__matmul__ = lambda self, o: matmul(self, o)
Tensor.__neg__ = _neg
Tensor.sum = lambda self, axis=None, keepdims=False: reduce_sum(self, axis, keepdims)
Tensor.mean = lambda self, axis=None, keepdims=False: reduce_mean(self, axis, keepdims)
Tensor.reshape = lambda self, shape: reshape(self, shape)
Tensor.transpose = lambda self, axes=None: transpose(self, axes)
