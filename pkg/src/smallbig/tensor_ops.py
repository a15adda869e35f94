"""Dense (N, C, T, H, W) primitives with explicit backward functions.

Every forward primitive is a pure function of numpy arrays.  Primitives that
need saved state for their gradient return ``(out, ctx)``; the matching
``*_backward`` consumes the upstream gradient and that ctx.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

GLOBAL = "T"  # symbolic window extent: pool the full axis

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


# --------------------------------------------------------------------------
# MAC instrumentation

_mac_counters: list[list[int]] = []


@contextlib.contextmanager
def count_macs():
    """Count multiply-accumulates issued by conv3d / linear / bmm inside the block.

    Yields a one-element list whose entry is the running total.
    """
    box = [0]
    _mac_counters.append(box)
    try:
        yield box
    finally:
        _mac_counters.remove(box)


def _add_macs(n: int) -> None:
    for box in _mac_counters:
        box[0] += int(n)


# --------------------------------------------------------------------------
# Specs


def _triple(v) -> tuple:
    if isinstance(v, (int, np.integer)) or v == GLOBAL:
        return (v, v, v)
    v = tuple(v)
    if len(v) != 3:
        raise ValueError(f"expected 3 entries, got {v!r}")
    return v


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple = (1, 1, 1)
    stride: tuple = (1, 1, 1)
    pad: tuple = (0, 0, 0)
    has_bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(int(k) for k in _triple(self.kernel)))
        object.__setattr__(self, "stride", tuple(int(s) for s in _triple(self.stride)))
        object.__setattr__(self, "pad", tuple(int(p) for p in _triple(self.pad)))

    @classmethod
    def same(cls, cin, cout, kernel, stride=(1, 1, 1), has_bias=False):
        kernel = _triple(kernel)
        return cls(cin, cout, kernel, stride, tuple(k // 2 for k in kernel), has_bias)

    @property
    def weight_shape(self) -> tuple:
        return (self.out_channels, self.in_channels) + self.kernel

    def out_dims(self, dims) -> tuple:
        out = tuple(
            (d + 2 * p - k) // s + 1
            for d, k, s, p in zip(dims, self.kernel, self.stride, self.pad)
        )
        if min(out) <= 0:
            raise ShapeError(f"non-positive conv output {out} for input {tuple(dims)}")
        return out


@dataclass(frozen=True)
class PoolSpec:
    window: tuple = (3, 3, 3)
    mode: str = "max"

    def __post_init__(self):
        win = tuple(w if w == GLOBAL else int(w) for w in _triple(self.window))
        for w in win:
            if w != GLOBAL and (w < 1 or w % 2 == 0):
                raise ValueError(f"pool window axes must be odd or GLOBAL, got {win}")
        if self.mode not in ("max", "avg"):
            raise ValueError(f"unknown pool mode {self.mode!r}")
        object.__setattr__(self, "window", win)

    def label(self) -> str:
        return "x".join(str(w) for w in self.window)


def check_tensor5(x: np.ndarray, name: str = "x") -> None:
    if x.ndim != 5:
        raise ShapeError(f"{name}: expected (N,C,T,H,W), got shape {x.shape}")


# --------------------------------------------------------------------------
# conv3d


def conv3d(x, w, b=None, stride=(1, 1, 1), pad=(0, 0, 0), need_ctx=True):
    check_tensor5(x)
    stride, pad = _triple(stride), _triple(pad)
    n, c, t, h, wd = x.shape
    o, ci, kt, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"conv3d channel mismatch: input has {c}, weight expects {ci}")
    spec = ConvSpec(ci, o, (kt, kh, kw), stride, pad)
    to, ho, wo = spec.out_dims((t, h, wd))
    k = kt * kh * kw
    _add_macs(n * o * c * k * to * ho * wo)

    if k == 1 and pad == (0, 0, 0):
        xs = x[:, :, ::stride[0], ::stride[1], ::stride[2]][:, :, :to, :ho, :wo]
        cols = xs.reshape(n, c, -1)
        y = np.matmul(w.reshape(o, c), cols).reshape(n, o, to, ho, wo)
        ctx = ("pointwise", x.shape, cols, w, stride) if need_ctx else None
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (pad[0],) * 2, (pad[1],) * 2, (pad[2],) * 2))
        win = sliding_window_view(xp, (kt, kh, kw), axis=(2, 3, 4))
        win = win[:, :, ::stride[0], ::stride[1], ::stride[2]][:, :, :to, :ho, :wo]
        # (N, To, Ho, Wo, C, kt, kh, kw) -> rows are output positions
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7)).reshape(
            n * to * ho * wo, c * k
        )
        y = (cols @ w.reshape(o, c * k).T).reshape(n, to, ho, wo, o).transpose(0, 4, 1, 2, 3)
        y = np.ascontiguousarray(y)
        ctx = ("general", x.shape, cols, w, stride, pad) if need_ctx else None
    if b is not None:
        y += b.reshape(1, o, 1, 1, 1)
    return y, ctx


def conv3d_backward(dy, ctx, need_dx=True):
    """Return ``(dx, dw, db)``; ``dx`` is None when ``need_dx`` is false."""
    kind, xshape, cols, w = ctx[:4]
    n, c, t, h, wd = xshape
    o = w.shape[0]
    if dy.shape[:2] != (n, o):
        raise ShapeError(f"upstream gradient {dy.shape} does not match conv output")
    db = dy.sum(axis=(0, 2, 3, 4))
    to, ho, wo = dy.shape[2:]
    if kind == "pointwise":
        stride = ctx[4]
        g = dy.reshape(n, o, -1)
        dw = np.einsum("nop,ncp->oc", g, cols, optimize=True).reshape(w.shape)
        dx = None
        if need_dx:
            dxs = np.matmul(w.reshape(o, c).T, g).reshape(n, c, to, ho, wo)
            if stride == (1, 1, 1):
                dx = dxs
            else:
                dx = np.zeros(xshape, dtype=dy.dtype)
                dx[:, :, ::stride[0], ::stride[1], ::stride[2]][:, :, :to, :ho, :wo] = dxs
        return dx, dw, db

    stride, pad = ctx[4], ctx[5]
    kt, kh, kw = w.shape[2:]
    g = np.ascontiguousarray(dy.transpose(0, 2, 3, 4, 1)).reshape(-1, o)
    dw = (g.T @ cols).reshape(w.shape)
    if not need_dx:
        return None, dw, db
    dcols = (g @ w.reshape(o, -1)).reshape(n, to, ho, wo, c, kt, kh, kw)
    dxp = np.zeros((n, c, t + 2 * pad[0], h + 2 * pad[1], wd + 2 * pad[2]), dtype=dy.dtype)
    st, sh, sw = stride
    for a in range(kt):
        for bb in range(kh):
            for cc in range(kw):
                dxp[:, :, a:a + st * to:st, bb:bb + sh * ho:sh, cc:cc + sw * wo:sw] += (
                    dcols[..., a, bb, cc].transpose(0, 4, 1, 2, 3)
                )
    dx = dxp[:, :, pad[0]:pad[0] + t, pad[1]:pad[1] + h, pad[2]:pad[2] + wd]
    return np.ascontiguousarray(dx), dw, db


# --------------------------------------------------------------------------
# same-size pooling

def _axis_extent(window, length):
    if window == GLOBAL:
        return None
    return int(window) // 2


def _max_along(x, idx, axis, r):
    """Centered sliding max along ``axis`` with radius r (None = whole axis).

    ``idx`` carries the flat source index of every element; the winner's index
    travels with its value.  Offsets are scanned low to high with a strict
    comparison, so ties keep the lowest index.
    """
    L = x.shape[axis]
    if r == 0:
        return x, idx

    def sl(a, lo, hi):
        key = [slice(None)] * a.ndim
        key[axis] = slice(lo, hi)
        return a[tuple(key)]

    if r is None:
        best, bi = sl(x, 0, 1), sl(idx, 0, 1)
        for k in range(1, L):
            v, i = sl(x, k, k + 1), sl(idx, k, k + 1)
            take = v > best
            best = np.where(take, v, best)
            bi = np.where(take, i, bi)
        shape = x.shape
        return np.ascontiguousarray(np.broadcast_to(best, shape)), np.ascontiguousarray(
            np.broadcast_to(bi, shape))
    widths = [(0, 0)] * x.ndim
    widths[axis] = (r, r)
    xp = np.pad(x, widths, constant_values=-np.inf)
    ip = np.pad(idx, widths)
    best = np.full(x.shape, -np.inf, dtype=x.dtype)
    bi = idx.copy()
    for d in range(2 * r + 1):
        v = sl(xp, d, d + L)
        take = v > best
        np.copyto(best, v, where=take)
        np.copyto(bi, sl(ip, d, d + L), where=take)
    return best, bi


def _sum_along(x, axis, r):
    """Centered windowed sum added in symmetric pairs so reversal is bitwise exact."""
    L = x.shape[axis]
    if r is None:
        xm = np.moveaxis(x, axis, 0)
        total = xm[L // 2].copy() if L % 2 else np.zeros_like(xm[0])
        for i in range(L // 2):
            total = total + (xm[i] + xm[L - 1 - i])
        out = np.broadcast_to(np.expand_dims(total, axis), x.shape)
        count = np.full(L, L, dtype=np.int64)
        return np.ascontiguousarray(out), count
    if r == 0:
        return x, np.ones(L, dtype=np.int64)
    widths = [(0, 0)] * x.ndim
    widths[axis] = (r, r)
    xp = np.moveaxis(np.pad(x, widths), axis, 0)
    out = xp[r:r + L].copy()
    for d in range(1, r + 1):
        out = out + (xp[r - d:r - d + L] + xp[r + d:r + d + L])
    pos = np.arange(L)
    count = np.minimum(pos + r, L - 1) - np.maximum(pos - r, 0) + 1
    return np.moveaxis(out, 0, axis), count


def pool3d(x, spec: PoolSpec):
    """Same-size stride-1 centered pooling, truncated at the borders.

    Returns ``(out, ctx)``.  For max mode ctx holds the flat (t,h,w) argmax of
    every output element, first in scan order on ties.
    """
    check_tensor5(x)
    n, c, t, h, w = x.shape
    rt, rh, rw = (_axis_extent(win, L) for win, L in zip(spec.window, (t, h, w)))
    if spec.mode == "max":
        flat = np.broadcast_to(np.arange(t * h * w, dtype=np.int64).reshape(1, 1, t, h, w), x.shape)
        v, flat = _max_along(x, flat, 4, rw)
        v, flat = _max_along(v, flat, 3, rh)
        v, flat = _max_along(v, flat, 2, rt)
        return np.ascontiguousarray(v, dtype=x.dtype), ("max", x.shape, flat)
    v, kt_ = _sum_along(x, 2, rt)
    v, kh_ = _sum_along(v, 3, rh)
    v, kw_ = _sum_along(v, 4, rw)
    count = (kt_[:, None, None] * kh_[None, :, None] * kw_[None, None, :]).astype(x.dtype)
    return (v / count).astype(x.dtype), ("avg", x.shape, spec, count)


def pool3d_backward(dy, ctx):
    kind, xshape = ctx[0], ctx[1]
    if dy.shape != xshape:
        raise ShapeError(f"upstream gradient {dy.shape} does not match pool input {xshape}")
    n, c, t, h, w = xshape
    if kind == "max":
        flat = ctx[2].reshape(n * c, -1)
        base = (np.arange(n * c) * (t * h * w))[:, None]
        g = np.bincount((flat + base).ravel(), weights=dy.ravel(), minlength=dy.size)
        return g.reshape(xshape).astype(dy.dtype)
    spec, count = ctx[2], ctx[3]
    g = dy / count
    rt, rh, rw = (_axis_extent(win, L) for win, L in zip(spec.window, (t, h, w)))
    g, _ = _sum_along(g, 2, rt)
    g, _ = _sum_along(g, 3, rh)
    g, _ = _sum_along(g, 4, rw)
    return np.ascontiguousarray(g, dtype=dy.dtype)


def global_pool(x, mode="max"):
    """Reduce (T,H,W) to (1,1,1) by max or mean."""
    check_tensor5(x)
    n, c = x.shape[:2]
    flat = x.reshape(n, c, -1)
    if mode == "max":
        idx = np.argmax(flat, axis=-1)
        out = np.take_along_axis(flat, idx[..., None], -1)
        return out.reshape(n, c, 1, 1, 1), ("max", x.shape, idx)
    if mode == "avg":
        return flat.mean(axis=-1).reshape(n, c, 1, 1, 1), ("avg", x.shape)
    raise ValueError(f"unknown pool mode {mode!r}")


def global_pool_backward(dy, ctx):
    kind, xshape = ctx[0], ctx[1]
    n, c = xshape[:2]
    p = int(np.prod(xshape[2:]))
    g = dy.reshape(n, c, 1)
    if kind == "max":
        dx = np.zeros((n, c, p), dtype=dy.dtype)
        np.put_along_axis(dx, ctx[2][..., None], g, -1)
        return dx.reshape(xshape)
    return np.broadcast_to(g / p, (n, c, p)).reshape(xshape).astype(dy.dtype)


def global_avg_pool(x):
    return global_pool(x, "avg")


# --------------------------------------------------------------------------
# batch norm


@dataclass
class BNState:
    """Running statistics of one batch-norm layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM

    @classmethod
    def fresh(cls, channels, dtype=np.float32):
        return cls(np.zeros(channels, dtype), np.ones(channels, dtype))


def bn_forward(x, gamma, beta, state: BNState, training: bool, update_stats: bool = True):
    check_tensor5(x)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"bn channel mismatch: input has {c}, gamma {gamma.shape}")
    axes = (0, 2, 3, 4)
    shape = (1, c, 1, 1, 1)
    if training:
        mu = x.mean(axis=axes)
        xc = x - mu.reshape(shape)
        var = (xc * xc).mean(axis=axes)
        if update_stats:
            m = state.momentum
            state.running_mean[...] = m * state.running_mean + (1 - m) * mu
            state.running_var[...] = m * state.running_var + (1 - m) * var
    else:
        mu, var = state.running_mean, state.running_var
        xc = x - mu.reshape(shape)
    inv = (1.0 / np.sqrt(var + state.eps)).astype(x.dtype)
    xhat = xc * inv.reshape(shape)
    y = gamma.reshape(shape) * xhat + beta.reshape(shape)
    return y.astype(x.dtype, copy=False), (training, xhat, inv, gamma)


def bn_backward(dy, ctx):
    """Return ``(dx, dgamma, dbeta)``."""
    training, xhat, inv, gamma = ctx
    if dy.shape != xhat.shape:
        raise ShapeError(f"upstream gradient {dy.shape} does not match bn input {xhat.shape}")
    axes = (0, 2, 3, 4)
    shape = (1, -1, 1, 1, 1)
    dbeta = dy.sum(axis=axes)
    dgamma = (dy * xhat).sum(axis=axes)
    dxhat = dy * gamma.reshape(shape)
    if not training:
        return dxhat * inv.reshape(shape), dgamma, dbeta
    m = dy.size // dy.shape[1]
    dx = (inv.reshape(shape) / m) * (
        m * dxhat
        - dxhat.sum(axis=axes).reshape(shape)
        - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape)
    )
    return dx, dgamma, dbeta


# --------------------------------------------------------------------------
# elementwise / dense


def relu(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dy, mask):
    return dy * mask


def sigmoid(x):
    # split by sign so large |x| never overflows exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, out


def sigmoid_backward(dy, s):
    return dy * s * (1 - s)


def softmax_over(x, axis=-1):
    if not -x.ndim <= axis < x.ndim:
        raise np.exceptions.AxisError(axis, x.ndim)
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return s, (s, axis)


def softmax_backward(dy, ctx):
    s, axis = ctx
    return s * (dy - (dy * s).sum(axis=axis, keepdims=True))


def linear(x, w, b=None):
    """x: (N, in), w: (out, in), b: (out,)."""
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[-1]} vs weight {w.shape}")
    _add_macs(x.shape[0] * w.shape[0] * w.shape[1])
    y = x @ w.T
    if b is not None:
        y = y + b
    return y, (x, w)


def linear_backward(dy, ctx):
    x, w = ctx
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def bmm(a, b):
    """Batched matrix product (..., m, k) @ (..., k, n)."""
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"bmm: {a.shape} @ {b.shape}")
    _add_macs(int(np.prod(a.shape[:-1])) * a.shape[-1] * b.shape[-1])
    return np.matmul(a, b), (a, b)


def bmm_backward(dy, ctx):
    a, b = ctx
    return np.matmul(dy, np.swapaxes(b, -1, -2)), np.matmul(np.swapaxes(a, -1, -2), dy)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy; returns ``(loss, probs)``."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(len(labels)), labels].mean()
    return loss, np.exp(logp)


def cross_entropy_backward(probs, labels, scale=1.0):
    g = probs.copy()
    g[np.arange(len(labels)), labels] -= 1
    return g * (scale / len(labels))
