"""Minimal define-by-run reverse-mode differentiation over tensor_ops."""

from __future__ import annotations

import contextlib

import numpy as np

from . import tensor_ops as ops

_grad_enabled = [True]


@contextlib.contextmanager
def no_grad():
    _grad_enabled.append(False)
    try:
        yield
    finally:
        _grad_enabled.pop()


class Var:
    """An array node in the tape.  Leaves with ``requires_grad`` collect ``.grad``."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = ()
        self.backward_fn = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Var({self.name or ''} shape={self.data.shape})"

    def zero_grad(self):
        self.grad = None


def _node(data, parents, backward_fn):
    out = Var(data)
    if _grad_enabled[-1] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(root: Var, grad=None):
    """Accumulate d(root)/d(leaf) into every reachable leaf's ``.grad``."""
    if grad is None:
        grad = np.ones_like(root.data)
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        v, done = stack.pop()
        if done:
            order.append(v)
            continue
        if id(v) in seen:
            continue
        seen.add(id(v))
        stack.append((v, True))
        for p in v.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads = {id(root): grad}
    for v in reversed(order):
        g = grads.pop(id(v), None)
        if g is None:
            continue
        if v.backward_fn is None:
            v.grad = g.copy() if v.grad is None else v.grad + g
            continue
        for p, pg in zip(v.parents, v.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg


# --------------------------------------------------------------------------
# differentiable wrappers


def conv3d(x: Var, w: Var, b: Var | None = None, stride=(1, 1, 1), pad=(0, 0, 0)):
    track = _grad_enabled[-1] and (x.requires_grad or w.requires_grad)
    y, ctx = ops.conv3d(x.data, w.data, None if b is None else b.data, stride, pad, need_ctx=track)
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        dx, dw, db = ops.conv3d_backward(g, ctx, need_dx=x.requires_grad)
        return (dx, dw) if b is None else (dx, dw, db)

    return _node(y, parents, bwd)


def pool3d(x: Var, spec: ops.PoolSpec):
    y, ctx = ops.pool3d(x.data, spec)
    return _node(y, (x,), lambda g: (ops.pool3d_backward(g, ctx),))


def global_pool(x: Var, mode="max"):
    y, ctx = ops.global_pool(x.data, mode)
    return _node(y, (x,), lambda g: (ops.global_pool_backward(g, ctx),))


def batch_norm(x: Var, gamma: Var, beta: Var, state: ops.BNState, training: bool,
               update_stats: bool = True):
    y, ctx = ops.bn_forward(x.data, gamma.data, beta.data, state, training, update_stats)
    return _node(y, (x, gamma, beta), lambda g: ops.bn_backward(g, ctx))


def relu(x: Var):
    y, mask = ops.relu(x.data)
    return _node(y, (x,), lambda g: (ops.relu_backward(g, mask),))


def sigmoid(x: Var):
    y, s = ops.sigmoid(x.data)
    return _node(y, (x,), lambda g: (ops.sigmoid_backward(g, s),))


def softmax(x: Var, axis=-1):
    y, ctx = ops.softmax_over(x.data, axis)
    return _node(y, (x,), lambda g: (ops.softmax_backward(g, ctx),))


def linear(x: Var, w: Var, b: Var | None = None):
    y, ctx = ops.linear(x.data, w.data, None if b is None else b.data)
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        dx, dw, db = ops.linear_backward(g, ctx)
        return (dx, dw) if b is None else (dx, dw, db)

    return _node(y, parents, bwd)


def bmm(a: Var, b: Var):
    y, ctx = ops.bmm(a.data, b.data)
    return _node(y, (a, b), lambda g: ops.bmm_backward(g, ctx))


def add(a: Var, b: Var):
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a: Var, b: Var):
    ad, bd = a.data, b.data
    return _node(
        ad * bd, (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(a: Var, k: float):
    return _node(a.data * k, (a,), lambda g: (g * k,))


def subsample(x: Var, stride):
    """Keep every stride-th element along (T, H, W)."""
    st, sh, sw = stride
    shape = x.shape

    def bwd(g):
        dx = np.zeros(shape, dtype=g.dtype)
        dx[:, :, ::st, ::sh, ::sw] = g
        return (dx,)

    return _node(np.ascontiguousarray(x.data[:, :, ::st, ::sh, ::sw]), (x,), bwd)


def reshape(x: Var, shape):
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Var, axes):
    inv = np.argsort(axes)
    return _node(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inv),))


def total(x: Var):
    """Sum of all entries as a scalar node."""
    return _node(np.asarray(x.data.sum()), (x,), lambda g: (np.full_like(x.data, g),))


def cross_entropy(logits: Var, labels):
    labels = np.asarray(labels)
    loss, probs = ops.cross_entropy(logits.data, labels)
    out = _node(np.asarray(loss, dtype=logits.data.dtype), (logits,),
                lambda g: (ops.cross_entropy_backward(probs, labels, float(g)).astype(
                    logits.data.dtype),))
    return out, probs
