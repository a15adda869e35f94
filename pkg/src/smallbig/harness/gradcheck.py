"""Reverse-mode gradients against central finite differences in 64-bit."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autograd as ag
from ..network import NetSpec, build_net, copy_matching


@dataclass
class GradcheckResult:
    rel_error: float
    tol: float
    per_tensor: dict = field(default_factory=dict)
    checked: int = 0

    @property
    def passed(self) -> bool:
        return self.rel_error < self.tol


def _rel(a, b) -> float:
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / den)


def gradcheck_net(spec: NetSpec, seed: int = 0, batch: int = 4, per_tensor: int = 4,
                  eps: float = 1e-6, tol: float = 1e-4, wake_zero_init: bool = True,
                  training: bool = True, input_shape=(1, 4, 16, 16)) -> GradcheckResult:
    """Compare d(loss)/d(param) with central differences on sampled entries.

    Every parameter tensor contributes ``per_tensor`` entries.  Zero-initialized
    scales (big-view BN, gates, nonlocal output) are randomized first so
    every branch carries gradient.  Inputs are continuous random values, so
    max-pool and ReLU ties have probability zero; entries whose finite
    difference straddles a kink show up as isolated outliers and are retried
    with a smaller step.  ``input_shape`` (C, T, H, W) overrides the
    config's clip size to keep the finite differences cheap.
    """
    if input_shape is not None:
        spec = spec.replace(input_shape=[spec.in_channels] + list(input_shape[1:]))
    net = build_net(spec, np.float64, seed=seed)
    store = net.store
    rng = np.random.default_rng(seed + 1)
    if wake_zero_init:
        for name, v in store.params.items():
            if store.init[name] == "zero":
                v.data[...] = rng.uniform(0.5, 1.0, v.shape) * rng.choice([-1, 1], v.shape)
    x = rng.standard_normal((batch,) + spec.input_shape)
    y = rng.integers(0, spec.num_classes, batch)

    def loss_value():
        with ag.no_grad():
            logits = net.forward(x, training=training, update_stats=False)
            return float(ag.cross_entropy(logits, y)[0].data)

    store.zero_grad()
    logits = net.forward(x, training=training, update_stats=False)
    ag.backward(ag.cross_entropy(logits, y)[0])
    analytic, numeric = [], []
    result = GradcheckResult(0.0, tol)
    for name, v in store.params.items():
        g = v.grad if v.grad is not None else np.zeros_like(v.data)
        flat = v.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        a_t, n_t = [], []
        for i in picks:
            old = flat[i]

            def central(h):
                flat[i] = old + h
                up = loss_value()
                flat[i] = old - h
                down = loss_value()
                flat[i] = old
                return (up - down) / (2 * h)

            a, est = g.reshape(-1)[i], central(eps)
            if abs(a - est) > 1e-6 * max(abs(a), abs(est), 1e-3):
                # a second step size tells a kink inside the stencil from a wrong gradient
                finer = central(eps / 10)
                if abs(est - finer) > 1e-3 * max(abs(est), abs(finer), 1e-6):
                    continue
            a_t.append(a)
            n_t.append(est)
        if a_t:
            result.per_tensor[name] = _rel(np.array(a_t), np.array(n_t))
            analytic += a_t
            numeric += n_t
    result.checked = len(analytic)
    result.rel_error = _rel(np.array(analytic), np.array(numeric))
    return result


def as_float64(net):
    """A 64-bit copy of ``net`` with identical weights and running statistics."""
    twin = build_net(net.spec, np.float64, seed=None)
    copy_matching(twin, net)
    return twin
